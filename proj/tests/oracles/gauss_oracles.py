"""Reference values for the Gaussian-expectation tests.

Uses mpmath adaptive quadrature at 30 digits, independent of the
Gauss-Hermite code under test. Run: python3 gauss_oracles.py
"""
import mpmath as mp

mp.mp.dps = 30
SQ2PI = mp.sqrt(2 * mp.pi)


def gauss(f):
    return mp.quad(lambda z: f(z) * mp.exp(-z * z / 2), [-mp.inf, -5, 0, 5, mp.inf]) / SQ2PI


def gauss2(f):
    inner = lambda z1: mp.quad(lambda z2: f(z1, z2) * mp.exp(-z2 * z2 / 2), [-mp.inf, 0, mp.inf]) / SQ2PI
    return mp.quad(lambda z1: inner(z1) * mp.exp(-z1 * z1 / 2), [-mp.inf, 0, mp.inf]) / SQ2PI


def e_tanh_sq(q):
    return gauss(lambda z: mp.tanh(mp.sqrt(q) * z) ** 2)


def e_dtanh_sq(q):
    return gauss(lambda z: mp.sech(mp.sqrt(q) * z) ** 4)


def cross_tanh(q1, q2, c):
    s = mp.sqrt(1 - c * c)
    return gauss2(lambda a, b: mp.tanh(mp.sqrt(q1) * a) * mp.tanh(mp.sqrt(q2) * (c * a + s * b)))


def V(sb, sw, q):
    return sb ** 2 + sw ** 2 * e_tanh_sq(q)


def fixed_point(sb, sw):
    return mp.findroot(lambda q: V(sb, sw, q) - q, 1.0)


def chi(sb, sw):
    return sw ** 2 * e_dtanh_sq(fixed_point(sb, sw))


def eoc(sb):
    return mp.findroot(lambda sw: chi(sb, sw) - 1, 1.4)


if __name__ == "__main__":
    print("E[tanh(Z)^2]            ", mp.nstr(e_tanh_sq(1), 17))
    print("E[sech(Z)^4]            ", mp.nstr(e_dtanh_sq(1), 17))
    print("cross(0.5, 2.0, 0.3)    ", mp.nstr(cross_tanh(mp.mpf("0.5"), 2, mp.mpf("0.3")), 17))
    print("V(0.3, 1.5, 1)          ", mp.nstr(V(mp.mpf("0.3"), mp.mpf("1.5"), 1), 17))
    print("q*(0.3, 1.5)            ", mp.nstr(fixed_point(mp.mpf("0.3"), mp.mpf("1.5")), 17))
    print("chi(0.3, 1.5)           ", mp.nstr(chi(mp.mpf("0.3"), mp.mpf("1.5")), 17))
    sw = eoc(mp.mpf("0.3"))
    print("eoc sigma_w(0.3)        ", mp.nstr(sw, 17), " q*", mp.nstr(fixed_point(mp.mpf("0.3"), sw), 17))
    print("relu f(0.5)             ", mp.nstr((mp.mpf("0.5") * mp.asin(mp.mpf("0.5")) + mp.sqrt(mp.mpf("0.75"))) / mp.pi + mp.mpf("0.25"), 17))
    print("folded Q(0.5), Q(0.9)   ", mp.nstr(mp.sqrt(2) * mp.erfinv(mp.mpf("0.5")), 17), mp.nstr(mp.sqrt(2) * mp.erfinv(mp.mpf("0.9")), 17))
