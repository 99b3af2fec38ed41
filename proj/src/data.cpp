#include <zlib.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#ifdef EDGEPRUNE_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "edgeprune/errors.hpp"
#include "edgeprune/expcli.hpp"
#include "edgeprune/rng.hpp"

namespace edgeprune::exp {

namespace fs = std::filesystem;

namespace {

std::uint32_t be32(const std::string& b, std::size_t pos) {
  if (pos + 4 > b.size()) throw FormatError("truncated IDX header", b.size());
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + 3]));
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string gunzip(const std::string& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError("zlib init failed", 0);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char buf[1 << 16];
  int rc = Z_OK;
  while (rc == Z_OK) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const std::size_t at = zs.total_in;
      inflateEnd(&zs);
      throw FormatError("gzip stream is corrupt", at);
    }
    out.append(buf, sizeof buf - zs.avail_out);
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

nnet::Tensor parse_idx_images(const std::string& bytes, std::size_t* rows, std::size_t* cols) {
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != 0x00000803) throw FormatError("bad IDX image magic", 0);
  const std::size_t n = be32(bytes, 4), r = be32(bytes, 8), c = be32(bytes, 12);
  const std::size_t need = 16 + n * r * c;
  if (bytes.size() < need) throw FormatError("truncated IDX image data", bytes.size());
  if (bytes.size() > need) throw FormatError("trailing bytes after IDX image data", need);
  nnet::Tensor t({n, r * c});
  for (std::size_t i = 0; i < n * r * c; ++i)
    t[i] = static_cast<unsigned char>(bytes[16 + i]) / 255.0;
  if (rows) *rows = r;
  if (cols) *cols = c;
  return t;
}

std::vector<int> parse_idx_labels(const std::string& bytes) {
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != 0x00000801) throw FormatError("bad IDX label magic", 0);
  const std::size_t n = be32(bytes, 4);
  if (bytes.size() < 8 + n) throw FormatError("truncated IDX label data", bytes.size());
  if (bytes.size() > 8 + n) throw FormatError("trailing bytes after IDX label data", 8 + n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<unsigned char>(bytes[8 + i]);
  return labels;
}

const std::vector<MnistFile>& mnist_files() {
  static const std::vector<MnistFile> files = {
      {"train-images-idx3-ubyte", 47040016},
      {"train-labels-idx1-ubyte", 60008},
      {"t10k-images-idx3-ubyte", 7840016},
      {"t10k-labels-idx1-ubyte", 10008},
  };
  return files;
}

std::string data_dir(const std::string& fallback) {
  if (const char* env = std::getenv("EDGEPRUNE_DATA_DIR"); env && *env) return env;
  return fallback;
}

void verify_mnist(const std::string& dir) {
  for (const auto& f : mnist_files()) {
    const fs::path p = fs::path(dir) / f.name;
    if (!fs::exists(p)) throw InvalidArgument("missing MNIST file '" + p.string() + "'");
    const auto size = fs::file_size(p);
    if (size != f.size)
      throw FormatError("'" + p.string() + "' has size " + std::to_string(size) + ", expected " +
                            std::to_string(f.size),
                        std::min<std::size_t>(size, f.size));
    std::ifstream in(p, std::ios::binary);
    std::string head(4, '\0');
    in.read(head.data(), 4);
    const std::uint32_t want = std::string(f.name).find("images") != std::string::npos ? 0x803 : 0x801;
    if (be32(head, 0) != want) throw FormatError("'" + p.string() + "' has a bad magic number", 0);
  }
}

Dataset load_mnist(const std::string& dir) {
  verify_mnist(dir);
  const fs::path d(dir);
  Dataset ds;
  ds.classes = 10;
  ds.train.inputs = parse_idx_images(read_file((d / "train-images-idx3-ubyte").string()));
  ds.train.labels = parse_idx_labels(read_file((d / "train-labels-idx1-ubyte").string()));
  ds.test.inputs = parse_idx_images(read_file((d / "t10k-images-idx3-ubyte").string()));
  ds.test.labels = parse_idx_labels(read_file((d / "t10k-labels-idx1-ubyte").string()));
  if (ds.train.labels.size() != ds.train.size() || ds.test.labels.size() != ds.test.size())
    throw FormatError("image and label counts differ", 4);
  return ds;
}

void fetch_mnist(const std::string& dir, const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("base URL needs a scheme");
  const auto path_start = base_url.find('/', scheme_end + 3);
  const std::string host = base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "/" : base_url.substr(path_start);
  if (prefix.back() != '/') prefix += '/';
  fs::create_directories(dir);
  httplib::Client client(host);
  client.set_follow_location(true);
  client.set_read_timeout(120, 0);
  for (const auto& f : mnist_files()) {
    const std::string url = prefix + f.name + ".gz";
    auto res = client.Get(url);
    if (!res) throw InvalidArgument("download of " + host + url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw InvalidArgument("download of " + host + url + " returned HTTP " + std::to_string(res->status));
    write_file_atomic((fs::path(dir) / f.name).string(), gunzip(res->body));
  }
  verify_mnist(dir);
}

Batch synthetic_data(std::size_t classes, std::size_t dim, std::size_t count, std::uint64_t seed,
                     double margin) {
  if (classes < 1 || dim < 1) throw InvalidArgument("synthetic_data: classes and dim must be >= 1");
  if (!(margin >= 0.0)) throw InvalidArgument("synthetic_data: margin must be >= 0");
  // Class means depend only on the seed so train and test splits share them.
  const CounterRng means_rng(seed, 1);
  std::vector<double> means(classes * dim);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      means[c * dim + j] = means_rng.normal(c * dim + j);
      norm += means[c * dim + j] * means[c * dim + j];
    }
    const double s = norm > 0.0 ? margin / std::sqrt(norm) : 0.0;
    for (std::size_t j = 0; j < dim; ++j) means[c * dim + j] *= s;
  }
  Batch b;
  b.inputs = nnet::Tensor({count, dim});
  b.labels.resize(count);
  const CounterRng noise(seed, 2);
  for (std::size_t i = 0; i < count; ++i) {
    const auto c = static_cast<std::size_t>(noise.bits(~std::uint64_t{0} - i) % classes);
    b.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < dim; ++j) b.inputs[i * dim + j] = means[c * dim + j] + noise.normal(i * dim + j);
  }
  return b;
}

Dataset synthetic_dataset(std::size_t classes, std::size_t dim, std::size_t train_count,
                          std::size_t test_count, std::uint64_t seed, double margin) {
  Dataset ds;
  ds.classes = classes;
  Batch all = synthetic_data(classes, dim, train_count + test_count, seed, margin);
  std::vector<std::size_t> tr(train_count), te(test_count);
  for (std::size_t i = 0; i < train_count; ++i) tr[i] = i;
  for (std::size_t i = 0; i < test_count; ++i) te[i] = train_count + i;
  ds.train = take_rows(all, tr);
  ds.test = take_rows(all, te);
  return ds;
}

Batch take_rows(const Batch& b, const std::vector<std::size_t>& rows) {
  const std::size_t n = b.size();
  const std::size_t per = n ? b.inputs.size() / n : 0;
  Batch out;
  std::vector<std::size_t> shape = b.inputs.shape;
  shape[0] = rows.size();
  out.inputs = nnet::Tensor(shape);
  const bool has_targets = b.targets.rank() > 0;
  std::size_t tper = 0;
  if (has_targets) {
    std::vector<std::size_t> ts = b.targets.shape;
    tper = b.targets.size() / n;
    ts[0] = rows.size();
    out.targets = nnet::Tensor(ts);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t src = rows[r];
    if (src >= n) throw InvalidArgument("take_rows: row index out of range");
    std::copy_n(b.inputs.data.begin() + static_cast<std::ptrdiff_t>(src * per), per,
                out.inputs.data.begin() + static_cast<std::ptrdiff_t>(r * per));
    if (!b.labels.empty()) out.labels.push_back(b.labels[src]);
    if (has_targets)
      std::copy_n(b.targets.data.begin() + static_cast<std::ptrdiff_t>(src * tper), tper,
                  out.targets.data.begin() + static_cast<std::ptrdiff_t>(r * tper));
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp" + std::to_string(reinterpret_cast<std::uintptr_t>(&contents));
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InvalidArgument("cannot open '" + tmp + "' for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw InvalidArgument("write to '" + tmp + "' failed");
  }
  fs::rename(tmp, p);
}

}  // namespace edgeprune::exp
