#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "edgeprune/checkpoint.hpp"
#include "edgeprune/errors.hpp"
#include "edgeprune/expcli.hpp"
#include "edgeprune/rng.hpp"

namespace edgeprune::exp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> permutation(std::size_t n, const CounterRng& rng, std::uint64_t round) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  const CounterRng r = rng.split(round);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(r.uniform(i) * static_cast<double>(i));
    std::swap(p[i - 1], p[std::min(j, i - 1)]);
  }
  return p;
}

nnet::Batch shape_for(const ArchSpec& arch, nnet::Batch b) {
  const std::size_t n = b.size();
  const std::size_t per = n ? b.inputs.size() / n : 0;
  const auto want = arch.input_shape(n);
  if (nnet::shape_size(want) != b.inputs.size() || per != nnet::shape_size(want) / std::max<std::size_t>(n, 1))
    throw ShapeMismatch("dataset has " + std::to_string(per) + " features per sample; the architecture expects " +
                        std::to_string(nnet::shape_size(want) / std::max<std::size_t>(n, 1)));
  b.inputs.shape = want;
  return b;
}

double batched_accuracy(const ArchSpec& arch, const nnet::ParamSet& p, const nnet::Batch& data) {
  const std::size_t n = data.size();
  if (n == 0) return 0.0;
  constexpr std::size_t chunk = 1000;
  double correct = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(n, start + chunk); ++i) rows.push_back(i);
    const nnet::Batch b = take_rows(data, rows);
    correct += nnet::accuracy(arch, p, nullptr, nullptr, b) * static_cast<double>(rows.size());
  }
  return correct / static_cast<double>(n);
}

}  // namespace

ResolvedInit resolve_init(const InitSpec& init, gaussfield::Activation act) {
  ResolvedInit r;
  r.sigma_b = init.sigma_b;
  if (init.phase == "explicit") {
    r.sigma_w = init.sigma_w;
  } else {
    const double s_eoc = gaussfield::eoc_solve(act, init.sigma_b).sigma_w;
    if (init.phase == "eoc")
      r.sigma_w = s_eoc;
    else if (init.phase == "ordered")
      r.sigma_w = init.ordered_factor * s_eoc;
    else if (init.phase == "chaotic")
      r.sigma_w = init.chaotic_factor * s_eoc;
    else
      throw InvalidArgument("unknown init phase '" + init.phase + "'");
  }
  r.chi = gaussfield::chi(act, r.sigma_b, r.sigma_w);
  r.kappa = std::abs(std::log(r.chi)) / 8.0;
  return r;
}

json ExperimentConfig::to_json() const {
  return {{"arch", nnet::arch_to_json(arch)},
          {"init",
           {{"phase", init.phase},
            {"sigma_b", init.sigma_b},
            {"sigma_w", init.sigma_w},
            {"ordered_factor", init.ordered_factor},
            {"chaotic_factor", init.chaotic_factor}}},
          {"pruning",
           {{"criterion", pruning::to_string(criterion)},
            {"sparsity", sparsity},
            {"rescale", rescale},
            {"saliency_batch", saliency_batch}}},
          {"training",
           {{"lr", lr}, {"batch_size", batch_size}, {"iterations", iterations}, {"log_every", log_every}}},
          {"seed", seed},
          {"trials", trials},
          {"data",
           {{"kind", data.kind},
            {"dir", data.dir},
            {"classes", data.classes},
            {"dim", data.dim},
            {"train_count", data.train_count},
            {"test_count", data.test_count},
            {"margin", data.margin},
            {"seed", data.seed}}},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("arch")) c.arch = nnet::arch_from_json(j.at("arch"));
    if (j.contains("init")) {
      const json& i = j.at("init");
      c.init.phase = i.value("phase", c.init.phase);
      c.init.sigma_b = i.value("sigma_b", c.init.sigma_b);
      c.init.sigma_w = i.value("sigma_w", c.init.sigma_w);
      c.init.ordered_factor = i.value("ordered_factor", c.init.ordered_factor);
      c.init.chaotic_factor = i.value("chaotic_factor", c.init.chaotic_factor);
      if (i.contains("sigma_w") && !i.contains("phase")) c.init.phase = "explicit";
    }
    if (j.contains("pruning")) {
      const json& p = j.at("pruning");
      c.criterion = pruning::parse_criterion(p.value("criterion", std::string("snip")));
      c.sparsity = p.value("sparsity", c.sparsity);
      c.rescale = p.value("rescale", c.rescale);
      c.saliency_batch = p.value("saliency_batch", c.saliency_batch);
    }
    if (j.contains("training")) {
      const json& t = j.at("training");
      c.lr = t.value("lr", c.lr);
      c.batch_size = t.value("batch_size", c.batch_size);
      c.iterations = t.value("iterations", c.iterations);
      c.log_every = t.value("log_every", c.log_every);
    }
    c.seed = j.value("seed", c.seed);
    c.trials = j.value("trials", c.trials);
    if (j.contains("data")) {
      const json& d = j.at("data");
      c.data.kind = d.value("kind", c.data.kind);
      c.data.dir = d.value("dir", c.data.dir);
      c.data.classes = d.value("classes", c.data.classes);
      c.data.dim = d.value("dim", c.data.dim);
      c.data.train_count = d.value("train_count", c.data.train_count);
      c.data.test_count = d.value("test_count", c.data.test_count);
      c.data.margin = d.value("margin", c.data.margin);
      c.data.seed = d.value("seed", c.data.seed);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (!(c.sparsity >= 0.0 && c.sparsity < 1.0)) throw InvalidArgument("config: sparsity must be in [0, 1)");
  if (!(c.lr > 0.0)) throw InvalidArgument("config: lr must be > 0");
  if (c.batch_size == 0) throw InvalidArgument("config: batch_size must be >= 1");
  if (c.data.kind != "synthetic" && c.data.kind != "mnist")
    throw InvalidArgument("config: data.kind must be synthetic or mnist");
  return c;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  return ExperimentConfig::from_json(j);
}

Dataset load_dataset(const DataSpec& spec) {
  if (spec.kind == "mnist") return load_mnist(spec.dir.empty() ? data_dir() : spec.dir);
  return synthetic_dataset(spec.classes, spec.dim, spec.train_count, spec.test_count, spec.seed,
                           spec.margin);
}

json RunRecord::to_json() const {
  return {{"config_hash", config_hash},
          {"status", status},
          {"error", error},
          {"losses", losses},
          {"test_accuracy", test_accuracy},
          {"wall_seconds", wall_seconds},
          {"sigma_w", init.sigma_w},
          {"sigma_b", init.sigma_b},
          {"chi", init.chi},
          {"kappa", init.kappa},
          {"prune_report", report.to_json()}};
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", std::string());
  r.losses = j.at("losses").get<std::vector<double>>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.init.sigma_w = j.value("sigma_w", 0.0);
  r.init.sigma_b = j.value("sigma_b", 0.0);
  r.init.chi = j.value("chi", 0.0);
  r.init.kappa = j.value("kappa", 0.0);
  const json& p = j.at("prune_report");
  r.report.sparsity = p.at("sparsity").get<double>();
  r.report.kept = p.at("kept").get<std::size_t>();
  r.report.total = p.at("total").get<std::size_t>();
  r.report.threshold = p.at("threshold").is_null() ? INFINITY : p.at("threshold").get<double>();
  r.report.layer_kept = p.at("layer_kept").get<std::vector<std::size_t>>();
  r.report.layer_size = p.at("layer_size").get<std::vector<std::size_t>>();
  r.report.layer_kept_fraction = p.at("layer_kept_fraction").get<std::vector<double>>();
  r.report.fully_pruned = p.at("fully_pruned_layers").get<std::vector<std::size_t>>();
  return r;
}

RunRecord run_prune_train(const ExperimentConfig& config, const Dataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config_hash = config.hash();
  const ArchSpec& arch = config.arch;
  arch.validate();
  const nnet::Batch train = shape_for(arch, data.train);
  const nnet::Batch test = shape_for(arch, data.test);
  if (train.size() == 0) throw InvalidArgument("training set is empty");

  rec.init = resolve_init(config.init, arch.act);
  nnet::ParamSet params = nnet::init_params(arch, rec.init.sigma_w, rec.init.sigma_b, config.seed);

  const CounterRng rng(config.seed, 0x7472616e);
  nnet::Batch sal_batch;
  const nnet::Batch* sal_ptr = nullptr;
  if (config.criterion == pruning::Criterion::snip) {
    auto perm = permutation(train.size(), rng, 0);
    perm.resize(std::min(config.saliency_batch, train.size()));
    sal_batch = take_rows(train, perm);
    sal_ptr = &sal_batch;
  }
  const auto sal = pruning::compute_saliency(config.criterion, arch, params, sal_ptr);
  const auto topk = pruning::global_topk_mask(sal, config.sparsity);
  rec.report = topk.report;
  if (config.rescale) {
    const auto f = pruning::rescale_factors(params, topk.mask);
    const auto mult = pruning::rescale_multipliers(f, rec.init.sigma_w);
    nnet::bake_mask(params, topk.mask, &mult);
  } else {
    nnet::bake_mask(params, topk.mask, nullptr);
  }

  try {
    std::vector<std::size_t> order;
    std::size_t cursor = train.size();
    std::uint64_t epoch = 0;
    double last = 0.0;
    for (std::size_t it = 0; it < config.iterations; ++it) {
      std::vector<std::size_t> rows;
      while (rows.size() < config.batch_size) {
        if (cursor >= order.size()) {
          order = permutation(train.size(), rng, ++epoch);
          cursor = 0;
        }
        rows.push_back(order[cursor++]);
      }
      const nnet::Batch b = take_rows(train, rows);
      const nnet::LossGrad lg = nnet::loss_and_grads(arch, params, nullptr, nullptr, b);
      last = lg.loss;
      if (config.log_every && it % config.log_every == 0) rec.losses.push_back(lg.loss);
      nnet::sgd_step(params, lg.grads, config.lr, &topk.mask);
    }
    if (config.iterations) rec.losses.push_back(last);
  } catch (const NumericOverflow& e) {
    rec.status = "overflow";
    rec.error = e.what();
  }
  rec.test_accuracy = batched_accuracy(arch, params, test);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

RunRecord run_prune_train(const ExperimentConfig& config) {
  return run_prune_train(config, load_dataset(config.data));
}

SweepGrid SweepGrid::from_json(const json& j) {
  SweepGrid g;
  g.base = ExperimentConfig::from_json(j.contains("base") ? j.at("base") : json::object());
  const json grid = j.value("grid", json::object());
  try {
    g.depths = grid.value("depths", std::vector<std::size_t>{g.base.arch.depth});
    g.sparsities = grid.value("sparsities", std::vector<double>{g.base.sparsity});
    g.phases = grid.value("phases", std::vector<std::string>{g.base.init.phase});
    g.rescale = grid.value("rescale", std::vector<bool>{g.base.rescale});
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("sweep grid: ") + e.what());
  }
  if (g.depths.empty() || g.sparsities.empty() || g.phases.empty() || g.rescale.empty())
    throw InvalidArgument("sweep grid: every axis needs at least one value");
  return g;
}

std::vector<ExperimentConfig> SweepGrid::cells() const {
  std::vector<ExperimentConfig> out;
  for (const auto& phase : phases)
    for (bool rs : rescale)
      for (std::size_t depth : depths)
        for (double s : sparsities) {
          ExperimentConfig c = base;
          c.init.phase = phase;
          c.rescale = rs;
          c.arch.depth = depth;
          c.sparsity = s;
          out.push_back(std::move(c));
        }
  return out;
}

std::vector<SweepRow> sweep(const SweepGrid& grid) {
  const auto cells = grid.cells();
  std::vector<SweepRow> rows(cells.size());
  const fs::path cell_dir = fs::path(grid.base.output_dir) / "cells";
  fs::create_directories(cell_dir);
  std::vector<bool> done(cells.size(), false);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    rows[i].config = cells[i];
    const fs::path p = cell_dir / (cells[i].hash() + ".json");
    if (!fs::exists(p)) continue;
    try {
      std::ifstream f(p);
      const RunRecord r = RunRecord::from_json(json::parse(f));
      if (r.config_hash == cells[i].hash() && r.status != "error") {
        rows[i].record = r;
        rows[i].resumed = true;
        done[i] = true;
      }
    } catch (const std::exception&) {
      // unreadable cache entry: rerun the cell
    }
  }
  const Dataset data = load_dataset(grid.base.data);
  const auto n = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (done[i]) continue;
    RunRecord r;
    try {
      r = run_prune_train(cells[i], data);
    } catch (const std::exception& e) {
      r.config_hash = cells[i].hash();
      r.status = "error";
      r.error = e.what();
    }
    write_file_atomic((cell_dir / (r.config_hash + ".json")).string(), r.to_json().dump(2) + "\n");
    rows[i].record = std::move(r);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "hash,phase,rescale,depth,sparsity,sigma_w,sigma_b,test_accuracy,final_loss,fully_pruned_layers,status\n";
  char buf[64];
  for (const auto& row : rows) {
    const auto& c = row.config;
    const auto& r = row.record;
    os << r.config_hash << ',' << c.init.phase << ',' << (c.rescale ? 1 : 0) << ',' << c.arch.depth << ',';
    std::snprintf(buf, sizeof buf, "%.4f,%.9g,%.9g,%.6f,", c.sparsity, r.init.sigma_w, r.init.sigma_b,
                  r.test_accuracy);
    os << buf;
    if (r.losses.empty()) {
      os << ',';
    } else {
      std::snprintf(buf, sizeof buf, "%.9g,", r.losses.back());
      os << buf;
    }
    os << r.report.fully_pruned.size() << ',' << r.status << '\n';
  }
  return os.str();
}

}  // namespace edgeprune::exp
