#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "edgeprune/checkpoint.hpp"
#include "edgeprune/errors.hpp"
#include "edgeprune/expcli.hpp"
#include "edgeprune/gaussfield.hpp"
#include "edgeprune/kernels.hpp"
#include "edgeprune/meanfield.hpp"
#include "edgeprune/pruning.hpp"
#include "edgeprune/rng.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
namespace gf = edgeprune::gaussfield;
namespace mf = edgeprune::meanfield;
namespace pr = edgeprune::pruning;
namespace ex = edgeprune::exp;
namespace nn = edgeprune::nnet;

namespace {

json read_json_arg(const std::string& arg) {
  // Inline JSON or a path to a JSON file.
  const auto first = arg.find_first_not_of(" \t\n");
  std::string text = arg;
  if (first == std::string::npos || arg[first] != '{') {
    std::ifstream f(arg);
    if (!f) throw edgeprune::InvalidArgument("cannot open '" + arg + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw edgeprune::FormatError(std::string("invalid JSON: ") + e.what(), e.byte);
  }
}

void emit(const std::string& out_path, const std::string& contents) {
  if (out_path.empty() || out_path == "-") {
    std::cout << contents;
  } else {
    ex::write_file_atomic(out_path, contents);
  }
}

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

double num(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw edgeprune::InvalidArgument(std::string("missing numeric parameter '") + key + "'");
  return j.at(key).get<double>();
}

// Saliency batch for a given seed: a seeded sample of the training split.
pr::BatchSource dataset_batches(const ex::ExperimentConfig& cfg, const ex::Dataset& data) {
  return [&cfg, &data](std::uint64_t seed) {
    const std::size_t n = data.train.size();
    const std::size_t take = std::min(cfg.saliency_batch, n);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    const edgeprune::CounterRng r(seed, 0x73616c);
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + static_cast<std::size_t>(r.uniform(i) * static_cast<double>(n - i));
      std::swap(rows[i], rows[std::min(j, n - 1)]);
    }
    rows.resize(take);
    nn::Batch b = ex::take_rows(data.train, rows);
    b.inputs.shape = cfg.arch.input_shape(take);
    return b;
  };
}

int cmd_eoc(gf::Activation act, double sigma_b, const std::string& format) {
  const gf::EdgePoint e = gf::eoc_solve(act, sigma_b);
  if (format == "csv") {
    std::cout << "act,sigma_b,sigma_w,q_star,chi\n"
              << gf::to_string(act) << ',' << shortest(e.sigma_b) << ',' << shortest(e.sigma_w) << ','
              << shortest(e.q_star) << ',' << shortest(e.chi) << '\n';
  } else {
    std::cout << dump({{"act", gf::to_string(act)},
                       {"sigma_b", e.sigma_b},
                       {"sigma_w", e.sigma_w},
                       {"q_star", e.q_star},
                       {"chi", e.chi},
                       {"conventional_q", e.conventional_q}});
  }
  return 0;
}

int cmd_trace(const std::string& config, double q0, double c0, std::size_t layers,
              const std::string& out) {
  const ex::ExperimentConfig cfg = ex::load_config(config);
  const ex::ResolvedInit init = ex::resolve_init(cfg.init, cfg.arch.act);
  const std::size_t L = layers ? layers : cfg.arch.depth;
  const mf::MeanFieldTrace t = mf::propagate_ffnn(cfg.arch.act, init.sigma_b, init.sigma_w, q0, c0, L);
  std::ostringstream os;
  mf::write_trace_csv(os, t);
  emit(out, os.str());
  return 0;
}

int cmd_prune_report(const std::string& config, const std::string& mask_out) {
  const ex::ExperimentConfig cfg = ex::load_config(config);
  const ex::ResolvedInit init = ex::resolve_init(cfg.init, cfg.arch.act);
  const nn::ParamSet params = nn::init_params(cfg.arch, init.sigma_w, init.sigma_b, cfg.seed);
  nn::Batch batch;
  if (cfg.criterion == pr::Criterion::snip) {
    const ex::Dataset data = ex::load_dataset(cfg.data);
    batch = dataset_batches(cfg, data)(cfg.seed);
  }
  const auto sal = pr::compute_saliency(cfg.criterion, cfg.arch, params,
                                        cfg.criterion == pr::Criterion::snip ? &batch : nullptr);
  const auto topk = pr::global_topk_mask(sal, cfg.sparsity);
  if (!mask_out.empty()) nn::save_mask(mask_out, cfg.arch, topk.mask);
  json j = topk.report.to_json();
  j["critical_sparsity"] = pr::critical_sparsity(sal);
  j["sigma_w"] = init.sigma_w;
  j["sigma_b"] = init.sigma_b;
  j["chi"] = init.chi;
  j["config_hash"] = cfg.hash();
  std::cout << dump(j);
  return 0;
}

int cmd_scr(const std::string& config, std::size_t trials) {
  const ex::ExperimentConfig cfg = ex::load_config(config);
  const ex::ResolvedInit init = ex::resolve_init(cfg.init, cfg.arch.act);
  ex::Dataset data;
  pr::BatchSource src;
  if (cfg.criterion == pr::Criterion::snip) {
    data = ex::load_dataset(cfg.data);
    src = dataset_batches(cfg, data);
  }
  const std::size_t n = trials ? trials : cfg.trials;
  const auto est = pr::estimate_expected_scr(cfg.arch, init.sigma_w, init.sigma_b, cfg.criterion, src, n,
                                             cfg.seed);
  json j = est.to_json();
  j["sigma_w"] = init.sigma_w;
  j["sigma_b"] = init.sigma_b;
  j["chi"] = init.chi;
  j["kappa"] = init.kappa;
  if (init.chi < 1.0) {
    const double L = static_cast<double>(cfg.arch.depth), N = static_cast<double>(cfg.arch.width);
    const auto b10 = mf::theorem1_bound(init.kappa, L, N, mf::LogBase::ten);
    const auto be = mf::theorem1_bound(init.kappa, L, N, mf::LogBase::natural);
    j["bound"] = {{"log10", b10.value}, {"log", be.value}, {"vacuous_log10", b10.vacuous}, {"vacuous_log", be.vacuous}};
  }
  std::cout << dump(j);
  return 0;
}

int cmd_bound(const std::string& which, const std::string& params) {
  const json p = read_json_arg(params);
  if (which == "thm1") {
    const double kappa = p.contains("kappa") ? num(p, "kappa") : std::abs(std::log(num(p, "chi"))) / 8.0;
    const double L = num(p, "L"), N = num(p, "N");
    const auto b10 = mf::theorem1_bound(kappa, L, N, mf::LogBase::ten);
    const auto be = mf::theorem1_bound(kappa, L, N, mf::LogBase::natural);
    std::cout << dump({{"kappa", kappa},
                       {"L", L},
                       {"N", N},
                       {"log10", {{"value", b10.value}, {"vacuous", b10.vacuous}}},
                       {"log", {{"value", be.value}, {"vacuous", be.vacuous}}}});
    return 0;
  }
  const double gamma = num(p, "gamma");
  const double zeta = p.value("zeta", 1.0);
  const double N = num(p, "N"), L = num(p, "L");
  const auto b = mf::mbp_bound(gamma, zeta, N, L, p.value("epsilon_points", 50), p.value("x_points", 2000));
  std::cout << dump({{"gamma", gamma},
                     {"zeta", zeta},
                     {"N", N},
                     {"L", L},
                     {"value", b.value},
                     {"vacuous", b.vacuous},
                     {"epsilon", b.epsilon},
                     {"x_eps", b.x_eps}});
  return 0;
}

int cmd_train(const std::string& config, const std::string& save) {
  const ex::ExperimentConfig cfg = ex::load_config(config);
  const ex::RunRecord rec = ex::run_prune_train(cfg);
  const fs::path dir(cfg.output_dir);
  ex::write_file_atomic((dir / (rec.config_hash + ".json")).string(), dump(rec.to_json()));
  std::ostringstream csv;
  csv << "step,loss\n";
  csv.precision(9);
  for (std::size_t i = 0; i < rec.losses.size(); ++i) {
    const std::size_t step = i + 1 == rec.losses.size() && cfg.iterations ? cfg.iterations : i * cfg.log_every;
    csv << step << ',' << rec.losses[i] << '\n';
  }
  ex::write_file_atomic((dir / (rec.config_hash + "_loss.csv")).string(), csv.str());
  if (!save.empty()) {
    // Dense weights; the run's mask follows from them and the config.
    const ex::ResolvedInit init = ex::resolve_init(cfg.init, cfg.arch.act);
    const nn::ParamSet params = nn::init_params(cfg.arch, init.sigma_w, init.sigma_b, cfg.seed);
    nn::save_params(save, cfg.arch, params);
  }
  std::cout << dump(rec.to_json());
  return rec.status == "ok" ? 0 : 3;
}

int cmd_sweep(const std::string& config, const std::string& out) {
  const ex::SweepGrid grid = ex::SweepGrid::from_json(read_json_arg(config));
  const auto rows = ex::sweep(grid);
  const std::string csv = ex::sweep_csv(rows);
  ex::write_file_atomic((fs::path(grid.base.output_dir) / "sweep.csv").string(), csv);
  emit(out, csv);
  return 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw edgeprune::FormatError("CSV has no column '" + name + "'", 0);
  }
};

Table read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw edgeprune::InvalidArgument("cannot open '" + path + "'");
  Table t;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(f, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size()) throw edgeprune::FormatError("ragged CSV row", offset);
      t.rows.push_back(std::move(cells));
    }
    offset += line.size() + 1;
  }
  return t;
}

double to_double(const std::string& s) {
  if (s.empty()) return NAN;
  return std::stod(s);
}

int cmd_plot(const std::string& input, const std::string& kind, const std::string& out) {
  std::string svg;
  if (kind == "neurons") {
    nn::ArchSpec arch;
    const nn::Mask mask = nn::load_mask(input, &arch);
    svg = ex::svg_heatmap(ex::neuron_kept_fraction(arch, mask), "Fraction of incoming weights kept",
                          "layer", "neuron");
  } else if (kind == "layers") {
    nn::ArchSpec arch;
    const nn::Mask mask = nn::load_mask(input, &arch);
    ex::Series s{"kept fraction", {}};
    for (std::size_t l = 0; l < arch.depth; ++l) {
      double kept = 0.0;
      for (double v : mask[l].data) kept += v != 0.0;
      s.values.push_back(kept / static_cast<double>(mask[l].size()));
    }
    svg = ex::svg_line_plot({s}, "Weights kept per layer", "layer", "kept fraction");
  } else if (kind == "trace") {
    const Table t = read_csv(input);
    std::vector<ex::Series> series;
    for (const char* col : {"q", "c", "qtilde"}) {
      ex::Series s{col, {}};
      const std::size_t ci = t.column(col);
      for (const auto& r : t.rows) s.values.push_back(to_double(r[ci]));
      series.push_back(std::move(s));
    }
    svg = ex::svg_line_plot(series, "Mean-field trace", "layer", "value");
  } else if (kind == "accuracy") {
    const Table t = read_csv(input);
    const std::size_t cp = t.column("phase"), cr = t.column("rescale"), cd = t.column("depth"),
                      cs = t.column("sparsity"), ca = t.column("test_accuracy");
    // One grid per (phase, rescale). Several grids go to <stem>_<panel><ext>.
    std::vector<std::string> panels;
    for (const auto& r : t.rows) {
      const std::string key = r[cp] + (r[cr] == "1" ? "+rescale" : "");
      if (std::find(panels.begin(), panels.end(), key) == panels.end()) panels.push_back(key);
    }
    if (t.rows.empty()) {
      std::cerr << "{\"warning\":\"empty input, nothing plotted\"}\n";
      return 0;
    }
    std::vector<std::string> outputs;
    for (const auto& panel : panels) {
      std::vector<std::size_t> depths;
      std::vector<double> sparsities;
      for (const auto& r : t.rows) {
        if (r[cp] + (r[cr] == "1" ? "+rescale" : "") != panel) continue;
        const auto d = static_cast<std::size_t>(std::stoul(r[cd]));
        const double s = to_double(r[cs]);
        if (std::find(depths.begin(), depths.end(), d) == depths.end()) depths.push_back(d);
        if (std::find(sparsities.begin(), sparsities.end(), s) == sparsities.end()) sparsities.push_back(s);
      }
      std::sort(depths.begin(), depths.end());
      std::sort(sparsities.begin(), sparsities.end());
      std::vector<std::vector<double>> acc(depths.size(), std::vector<double>(sparsities.size(), NAN));
      for (const auto& r : t.rows) {
        if (r[cp] + (r[cr] == "1" ? "+rescale" : "") != panel) continue;
        const auto di = std::find(depths.begin(), depths.end(), std::stoul(r[cd])) - depths.begin();
        const auto si = std::find(sparsities.begin(), sparsities.end(), to_double(r[cs])) - sparsities.begin();
        acc[di][si] = to_double(r[ca]);
      }
      outputs.push_back(ex::svg_accuracy_grid(depths, sparsities, acc, "Test accuracy, " + panel));
    }
    if (outputs.size() == 1 || out.empty() || out == "-") {
      for (const auto& o : outputs) emit(out, o);
      return 0;
    }
    const fs::path base(out);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      std::string name = panels[i];
      std::replace(name.begin(), name.end(), '+', '_');
      const fs::path p = base.parent_path() / (base.stem().string() + "_" + name + base.extension().string());
      ex::write_file_atomic(p.string(), outputs[i]);
    }
    return 0;
  } else {
    throw edgeprune::InvalidArgument("unknown plot kind '" + kind + "' (neurons, layers, trace, accuracy)");
  }
  if (svg.empty()) {
    std::cerr << "{\"warning\":\"empty input, nothing plotted\"}\n";
    return 0;
  }
  emit(out, svg);
  return 0;
}

int error_exit(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pruning at initialization on the edge of chaos"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (default: EDGEPRUNE_THREADS or all cores)");

  auto* eoc = app.add_subcommand("eoc", "Edge-of-chaos solver");
  eoc->require_subcommand(1);
  auto* eoc_solve = eoc->add_subcommand("solve", "sigma_w with chi = 1 for a given sigma_b");
  std::string act_name = "tanh", format = "json";
  double sigma_b = 0.0;
  eoc_solve->add_option("--act", act_name, "relu or tanh")->required();
  eoc_solve->add_option("--sigma-b", sigma_b, "Bias standard deviation")->required();
  eoc_solve->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

  auto* meanfield = app.add_subcommand("meanfield", "Mean-field recursions");
  meanfield->require_subcommand(1);
  auto* trace = meanfield->add_subcommand("trace", "Variance, correlation and gradient variance per layer");
  std::string config, out;
  double q0 = 1.0, c0 = 0.5;
  std::size_t layers = 0;
  trace->add_option("--config", config, "Experiment config (JSON)")->required();
  trace->add_option("--q0", q0, "Input variance");
  trace->add_option("--c0", c0, "Input correlation");
  trace->add_option("--layers", layers, "Depth (default: arch.depth)");
  trace->add_option("--output,-o", out, "CSV path (default stdout)");

  auto* prune = app.add_subcommand("prune", "Pruning at initialization");
  prune->require_subcommand(1);
  auto* report = prune->add_subcommand("report", "Global mask and per-layer summary");
  std::string mask_out;
  report->add_option("--config", config, "Experiment config (JSON)")->required();
  report->add_option("--save-mask", mask_out, "Write the mask in the checkpoint format");

  auto* scr = app.add_subcommand("scr", "Critical sparsity");
  scr->require_subcommand(1);
  auto* estimate = scr->add_subcommand("estimate", "Monte-Carlo estimate over seeds");
  std::size_t trials = 0;
  estimate->add_option("--config", config, "Experiment config (JSON)")->required();
  estimate->add_option("--trials", trials, "Number of seeds (default: config trials)");

  auto* bound = app.add_subcommand("bound", "Closed-form critical-sparsity bounds");
  bound->require_subcommand(1);
  std::string params;
  auto* thm1 = bound->add_subcommand("thm1", "Ordered-phase bound; params {kappa|chi, L, N}");
  thm1->add_option("--params", params, "Inline JSON or JSON file")->required();
  auto* mbp = bound->add_subcommand("mbp", "Magnitude-pruning bound; params {gamma, zeta, N, L}");
  mbp->add_option("--params", params, "Inline JSON or JSON file")->required();

  auto* train = app.add_subcommand("train", "Prune at initialization, then train with SGD");
  std::string save;
  train->add_option("--config", config, "Experiment config (JSON)")->required();
  train->add_option("--save-init", save, "Write the dense initialization checkpoint");

  auto* sweep = app.add_subcommand("sweep", "Depth x sparsity x phase grid");
  sweep->add_option("--config", config, "Sweep config (JSON)")->required();
  sweep->add_option("--output,-o", out, "CSV path (default stdout)");

  auto* plot = app.add_subcommand("plot", "SVG figures");
  std::string input, kind;
  plot->add_option("--input", input, "Mask checkpoint or CSV")->required();
  plot->add_option("--kind", kind, "neurons, layers, trace or accuracy")->required();
  plot->add_option("--output,-o", out, "SVG path (default stdout)");

  auto* mnist = app.add_subcommand("mnist", "MNIST files");
  mnist->require_subcommand(1);
  std::string dir, url = "https://ossci-datasets.s3.amazonaws.com/mnist";
  auto* fetch = mnist->add_subcommand("fetch", "Download, decompress and verify");
  fetch->add_option("--dir", dir, "Target directory (default: EDGEPRUNE_DATA_DIR or data/mnist)");
  fetch->add_option("--url", url, "Base URL holding the .gz files");
  auto* verify = mnist->add_subcommand("verify", "Check sizes and magic numbers");
  verify->add_option("--dir", dir, "Directory (default: EDGEPRUNE_DATA_DIR or data/mnist)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit("usage", e.what(), 2);
  }

  if (threads <= 0)
    if (const char* env = std::getenv("EDGEPRUNE_THREADS"); env && *env) threads = std::atoi(env);
  if (threads > 0) edgeprune::kernels::set_threads(threads);

  try {
    if (*eoc_solve) return cmd_eoc(gf::parse_activation(act_name), sigma_b, format);
    if (*trace) return cmd_trace(config, q0, c0, layers, out);
    if (*report) return cmd_prune_report(config, mask_out);
    if (*estimate) return cmd_scr(config, trials);
    if (*thm1) return cmd_bound("thm1", params);
    if (*mbp) return cmd_bound("mbp", params);
    if (*train) return cmd_train(config, save);
    if (*sweep) return cmd_sweep(config, out);
    if (*plot) return cmd_plot(input, kind, out);
    if (*fetch) {
      const std::string d = dir.empty() ? ex::data_dir() : dir;
      ex::fetch_mnist(d, url);
      std::cout << dump({{"dir", d}, {"status", "ok"}});
      return 0;
    }
    if (*verify) {
      const std::string d = dir.empty() ? ex::data_dir() : dir;
      ex::verify_mnist(d);
      std::cout << dump({{"dir", d}, {"status", "ok"}});
      return 0;
    }
  } catch (const edgeprune::Error& e) {
    return error_exit(e.kind(), e.what(), e.kind() == "invalid-argument" ? 2 : 1);
  } catch (const json::exception& e) {
    return error_exit("format-error", e.what(), 1);
  } catch (const std::exception& e) {
    return error_exit("internal", e.what(), 1);
  }
  return error_exit("usage", "no subcommand selected", 2);
}
