#include "edgeprune/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "edgeprune/errors.hpp"

namespace edgeprune::nnet {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "edgeprune-tensors";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_tensor(std::string& out, const Tensor& t) {
  for (double x : t.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    put_u64(out, bits);
  }
}

void write_atomic(const std::string& path, const std::string& bytes) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InvalidArgument("cannot open '" + tmp + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InvalidArgument("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string encode(json header, const std::vector<const Tensor*>& tensors) {
  json specs = json::array();
  for (const Tensor* t : tensors) specs.push_back(t->shape);
  header["format"] = kFormat;
  header["version"] = 1;
  header["tensors"] = specs;
  const std::string text = header.dump();
  std::string out;
  put_u64(out, text.size());
  out += text;
  for (const Tensor* t : tensors) put_tensor(out, *t);
  return out;
}

struct Decoded {
  json header;
  std::vector<Tensor> tensors;
};

Decoded decode(const std::string& bytes) {
  if (bytes.size() < 8) throw FormatError("truncated header length", bytes.size());
  const std::uint64_t len = get_u64(bytes, 0);
  if (len > bytes.size() - 8) throw FormatError("header length exceeds file size", 0);
  Decoded d;
  try {
    d.header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("bad JSON header: ") + e.what(), 8 + e.byte);
  }
  if (d.header.value("format", "") != kFormat) throw FormatError("not an edgeprune tensor file", 8);
  std::size_t pos = 8 + len;
  for (const auto& shape : d.header.at("tensors")) {
    Tensor t(shape.get<std::vector<std::size_t>>());
    if (t.size() > (bytes.size() - pos) / 8) throw FormatError("truncated tensor data", bytes.size());
    for (std::size_t i = 0; i < t.size(); ++i, pos += 8) {
      const std::uint64_t bits = get_u64(bytes, pos);
      std::memcpy(&t.data[i], &bits, sizeof bits);
    }
    d.tensors.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after tensor data", pos);
  return d;
}

}  // namespace

json arch_to_json(const ArchSpec& a) {
  json j = {{"kind", to_string(a.kind)},
            {"depth", a.depth},
            {"width", a.width},
            {"input_dim", a.input_dim},
            {"in_channels", a.in_channels},
            {"kernel_radius", a.kernel_radius},
            {"classes", a.classes},
            {"activation", gaussfield::to_string(a.act)},
            {"stable", a.stable},
            {"head", a.head}};
  if (!a.widths.empty()) j["widths"] = a.widths;
  if (!a.variance_scale.empty()) j["variance_scale"] = a.variance_scale;
  if (!std::isnan(a.branch_scale)) j["branch_scale"] = a.branch_scale;
  return j;
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec a;
  a.kind = parse_arch_kind(j.value("kind", std::string("ffnn")));
  a.depth = j.value("depth", a.depth);
  a.width = j.value("width", a.width);
  a.input_dim = j.value("input_dim", a.input_dim);
  a.in_channels = j.value("in_channels", a.in_channels);
  a.kernel_radius = j.value("kernel_radius", a.kernel_radius);
  a.classes = j.value("classes", a.classes);
  a.act = gaussfield::parse_activation(j.value("activation", std::string("tanh")));
  a.stable = j.value("stable", a.stable);
  a.head = j.value("head", a.head);
  if (j.contains("widths")) a.widths = j.at("widths").get<std::vector<std::size_t>>();
  if (j.contains("variance_scale")) a.variance_scale = j.at("variance_scale").get<std::vector<double>>();
  if (j.contains("branch_scale")) a.branch_scale = j.at("branch_scale").get<double>();
  a.validate();
  return a;
}

void save_params(const std::string& path, const ArchSpec& arch, const ParamSet& params) {
  std::vector<const Tensor*> ts;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    ts.push_back(&params.weights[l]);
    ts.push_back(&params.biases[l]);
  }
  json header = {{"kind", "params"},
                 {"arch", arch_to_json(arch)},
                 {"seed", params.seed},
                 {"sigma_w", params.sigma_w},
                 {"sigma_b", params.sigma_b}};
  write_atomic(path, encode(header, ts));
}

void load_params(const std::string& path, ArchSpec& arch, ParamSet& params) {
  Decoded d = decode(read_all(path));
  if (d.header.value("kind", "") != "params") throw FormatError("file does not hold parameters", 8);
  if (d.tensors.size() % 2) throw FormatError("odd tensor count for weight/bias pairs", 8);
  arch = arch_from_json(d.header.at("arch"));
  ParamSet p;
  p.seed = d.header.value("seed", std::uint64_t{0});
  p.sigma_w = d.header.value("sigma_w", 1.0);
  p.sigma_b = d.header.value("sigma_b", 0.0);
  for (std::size_t i = 0; i < d.tensors.size(); i += 2) {
    p.weights.push_back(std::move(d.tensors[i]));
    p.biases.push_back(std::move(d.tensors[i + 1]));
  }
  params = std::move(p);
}

void save_mask(const std::string& path, const ArchSpec& arch, const Mask& mask) {
  std::vector<const Tensor*> ts;
  for (const auto& m : mask) ts.push_back(&m);
  write_atomic(path, encode({{"kind", "mask"}, {"arch", arch_to_json(arch)}}, ts));
}

Mask load_mask(const std::string& path, ArchSpec* arch) {
  Decoded d = decode(read_all(path));
  if (d.header.value("kind", "") != "mask") throw FormatError("file does not hold a mask", 8);
  if (arch) *arch = arch_from_json(d.header.at("arch"));
  return std::move(d.tensors);
}

}  // namespace edgeprune::nnet
