// agm command line: synthetic data, graph building, training, labeling and
// evaluation workflows. All outputs are reproducible from the echoed config
// and seed (single-threaded mode is bit-exact).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "agm/metrics.hpp"
#include "agm/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Scalar = float;  // training precision

struct RunConfig {
  agm::PipelineConfig pipeline;
  agm::FeatureSpec features;
  agm::TrainConfig train;
  agm::AgmnConfig model;
  agm::SynthConfig synth;
  uint64_t seed = 0;
  json effective;  // echoed into run directories
};

void reject_unknown(const json& j, const std::vector<std::string>& known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw agm::Error(agm::ErrorKind::invalid_input,
                       "unknown config key '" + it.key() + "' in " + where);
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  reject_unknown(j, {"pipeline", "features", "train", "model", "synth", "seed"}, "config");
  if (j.contains("pipeline")) {
    const json& p = j["pipeline"];
    reject_unknown(p, {"t_d_mm", "t_c_px", "t_sp_px", "pixel_spacing"}, "pipeline");
    c.pipeline.t_d_mm = p.value("t_d_mm", c.pipeline.t_d_mm);
    c.pipeline.t_c_px = p.value("t_c_px", c.pipeline.t_c_px);
    c.pipeline.t_sp_px = p.value("t_sp_px", c.pipeline.t_sp_px);
    c.pipeline.pixel_spacing = p.value("pixel_spacing", c.pipeline.pixel_spacing);
  }
  if (j.contains("features")) {
    const json& p = j["features"];
    reject_unknown(p, {"gray_levels"}, "features");
    c.features.gray_levels = p.value("gray_levels", c.features.gray_levels);
  }
  if (j.contains("train")) {
    const json& p = j["train"];
    reject_unknown(p, {"steps", "batch", "base_lr", "lr_decay", "lr_interval", "staircase"},
                   "train");
    c.train.steps = p.value("steps", c.train.steps);
    c.train.batch = p.value("batch", c.train.batch);
    c.train.lr.base_lr = p.value("base_lr", c.train.lr.base_lr);
    c.train.lr.decay = p.value("lr_decay", c.train.lr.decay);
    c.train.lr.interval = p.value("lr_interval", c.train.lr.interval);
    c.train.lr.staircase = p.value("staircase", c.train.lr.staircase);
  }
  if (j.contains("model")) {
    const json& p = j["model"];
    reject_unknown(p, {"hidden", "depth", "n_mp", "share_steps"}, "model");
    c.model.hidden = p.value("hidden", c.model.hidden);
    c.model.depth = p.value("depth", c.model.depth);
    c.model.n_mp = p.value("n_mp", c.model.n_mp);
    c.model.share_steps = p.value("share_steps", c.model.share_steps);
  }
  if (j.contains("synth")) {
    const json& p = j["synth"];
    reject_unknown(p, {"width", "height", "spacing", "overlap_fraction"}, "synth");
    c.synth.width = p.value("width", c.synth.width);
    c.synth.height = p.value("height", c.synth.height);
    c.synth.spacing = p.value("spacing", c.synth.spacing);
    c.synth.overlap_fraction = p.value("overlap_fraction", c.synth.overlap_fraction);
  }
  c.seed = j.value("seed", uint64_t(0));
  c.train.seed = c.seed;
  return c;
}

json effective_json(const RunConfig& c) {
  json j;
  j["pipeline"] = {{"t_d_mm", c.pipeline.t_d_mm},
                   {"t_c_px", c.pipeline.t_c_px},
                   {"t_sp_px", c.pipeline.t_sp_px},
                   {"pixel_spacing", c.pipeline.pixel_spacing}};
  j["features"] = {{"gray_levels", c.features.gray_levels}};
  j["train"] = {{"steps", c.train.steps},       {"batch", c.train.batch},
                {"base_lr", c.train.lr.base_lr}, {"lr_decay", c.train.lr.decay},
                {"lr_interval", c.train.lr.interval}, {"staircase", c.train.lr.staircase}};
  j["model"] = {{"hidden", c.model.hidden},
                {"depth", c.model.depth},
                {"n_mp", c.model.n_mp},
                {"share_steps", c.model.share_steps}};
  j["synth"] = {{"width", c.synth.width},
                {"height", c.synth.height},
                {"spacing", c.synth.spacing},
                {"overlap_fraction", c.synth.overlap_fraction}};
  j["seed"] = c.seed;
  return j;
}

RunConfig load_config(const std::string& path, uint64_t seed_override,
                      bool seed_given) {
  json j = json::object();
  std::string p = path;
  if (p.empty())
    if (const char* env = std::getenv("AGM_CONFIG")) p = env;
  if (!p.empty()) {
    std::ifstream f(p);
    if (!f) throw agm::Error(agm::ErrorKind::invalid_input, "cannot read config " + p);
    f >> j;
  }
  RunConfig c = parse_config(j);
  if (seed_given) {
    c.seed = seed_override;
    c.train.seed = seed_override;
  }
  c.effective = effective_json(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw agm::Error(agm::ErrorKind::invalid_input, "cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw agm::Error(agm::ErrorKind::invalid_input, "cannot read " + path.string());
  json j;
  f >> j;
  return j;
}

void echo_run(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  write_json(dir / "config.json", c.effective);
}

std::vector<agm::IndividualGraph> load_graph_dir(const std::string& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir))
    throw agm::Error(agm::ErrorKind::invalid_input, "not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().string().ends_with(".graph.json")) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw agm::Error(agm::ErrorKind::invalid_input, "no *.graph.json files in " + dir);
  std::vector<agm::IndividualGraph> graphs;
  for (const auto& f : files) graphs.push_back(agm::graph_from_json(read_json(f)));
  return graphs;
}

int run(int argc, char** argv) {
  CLI::App app{"Coronary-artery semantic labeling by inexact graph matching"};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  app.add_option("--config", config_path, "run config JSON (or $AGM_CONFIG)");
  app.add_option("--seed", seed, "seed override")->each([&](const std::string&) {
    seed_given = true;
  });
  app.add_option("--threads", threads,
                 "worker threads; 1 guarantees bit-exact reproducibility");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark");
  int count = 120;
  std::string out_dir;
  synth->add_option("--count", count, "number of samples (>= 20)");
  synth->add_option("--out", out_dir, "output directory")->required();

  // build-graph
  auto* bg = app.add_subcommand("build-graph", "binary mask -> individual graph JSON");
  std::string mask_path, gray_path, bg_out, view_tag = "RAO";
  bg->add_option("--mask", mask_path, "binary vessel mask PGM")->required();
  bg->add_option("--gray", gray_path, "grayscale image PGM (enables features)");
  bg->add_option("--view", view_tag, "view tag (LAO or RAO)");
  bg->add_option("--out", bg_out, "output graph JSON")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a matching model");
  std::string data_dir, run_dir;
  tr->add_option("--data", data_dir, "directory of labeled *.graph.json")->required();
  tr->add_option("--out", run_dir, "run directory")->required();

  // label
  auto* lb = app.add_subcommand("label", "label one graph against templates");
  std::string model_path, graph_path, tpl_dir, labels_out;
  lb->add_option("--model", model_path, "checkpoint JSON")->required();
  lb->add_option("--graph", graph_path, "graph JSON to label")->required();
  lb->add_option("--templates", tpl_dir, "directory of labeled template graphs")->required();
  lb->add_option("--out", labels_out, "output labels JSON")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a model on labeled test graphs");
  std::string ev_model, ev_data, ev_tpl, ev_out;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data, "labeled test graphs")->required();
  ev->add_option("--templates", ev_tpl)->required();
  ev->add_option("--out", ev_out, "run directory")->required();

  // importance
  auto* im = app.add_subcommand("importance", "leave-one-out feature importance");
  std::string im_model, im_data, im_tpl, im_out;
  im->add_option("--model", im_model)->required();
  im->add_option("--data", im_data)->required();
  im->add_option("--templates", im_tpl)->required();
  im->add_option("--out", im_out)->required();

  // attack
  auto* at = app.add_subcommand("attack", "segment-removal robustness sweep");
  std::string at_model, at_data, at_tpl, at_out;
  std::vector<double> levels = {0.0, 0.05, 0.075, 0.10, 0.125, 0.15, 0.175, 0.20};
  int n_seeds = 3;
  at->add_option("--model", at_model)->required();
  at->add_option("--data", at_data)->required();
  at->add_option("--templates", at_tpl)->required();
  at->add_option("--levels", levels, "removal probabilities");
  at->add_option("--attack-seeds", n_seeds, "number of corruption seeds");
  at->add_option("--out", at_out)->required();

  // xval
  auto* xv = app.add_subcommand("xval", "stratified 5-fold cross-validation");
  std::string xv_data, xv_out;
  double tpl_frac = 0.15;
  xv->add_option("--data", xv_data, "benchmark directory")->required();
  xv->add_option("--template-frac", tpl_frac, "template fraction (e.g. 0.1..0.3)");
  xv->add_option("--out", xv_out, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (threads < 1)
    throw agm::Error(agm::ErrorKind::invalid_input, "--threads must be >= 1");

  RunConfig cfg = load_config(config_path, seed, seed_given);

  auto normalize_with = [](std::vector<agm::IndividualGraph> gs,
                           const agm::NormalizationStats& st) {
    agm::normalize_graphs(gs, st);
    return gs;
  };

  if (*synth) {
    if (count < 20)
      throw agm::Error(agm::ErrorKind::invalid_input, "--count must be >= 20");
    agm::SynthConfig sc = cfg.synth;
    agm::Benchmark bench = agm::make_benchmark(count, cfg.seed, sc);
    fs::path dir(out_dir);
    echo_run(dir, cfg);
    json manifest;
    manifest["schema_version"] = "agm-manifest-1";
    manifest["count"] = count;
    manifest["seed"] = cfg.seed;
    manifest["first_try_topology_matches"] = bench.first_try_matches;
    manifest["failed_seeds"] = bench.failed_seeds;
    manifest["samples"] = json::array();
    for (int i = 0; i < count; ++i) {
      char tag[16];
      std::snprintf(tag, sizeof(tag), "sample_%03d", i);
      const auto& s = bench.samples[size_t(i)];
      agm::write_pgm((dir / (std::string(tag) + "_gray.pgm")).string(), s.gray);
      agm::write_pgm((dir / (std::string(tag) + "_mask.pgm")).string(), s.mask);
      write_json(dir / (std::string(tag) + "_truth.json"), agm::sample_truth_json(s));
      write_json(dir / (std::string(tag) + ".graph.json"),
                 agm::graph_to_json(bench.graphs[size_t(i)]));
      manifest["samples"].push_back({{"tag", tag},
                                     {"seed", s.seed},
                                     {"view", s.view_tag},
                                     {"gray", std::string(tag) + "_gray.pgm"},
                                     {"mask", std::string(tag) + "_mask.pgm"},
                                     {"graph", std::string(tag) + ".graph.json"}});
    }
    write_json(dir / "manifest.json", manifest);
    std::cout << "wrote " << count << " samples to " << out_dir << "\n";
    return 0;
  }

  if (*bg) {
    agm::BinaryMask mask = agm::read_pgm_mask(mask_path);
    agm::PipelineConfig pc = cfg.pipeline;
    agm::IndividualGraph g = agm::build_individual_graph(mask, pc);
    g.view_tag = view_tag;
    g.image_width = mask.width;
    g.image_height = mask.height;
    g.pixel_spacing = pc.pixel_spacing;
    g.provenance = "build-graph " + mask_path;
    if (!gray_path.empty()) {
      agm::GrayImage gray = agm::read_pgm(gray_path);
      agm::extract_features(g, mask, gray, cfg.features);
    }
    write_json(bg_out, agm::graph_to_json(g));
    std::cout << "graph with " << g.n() << " nodes -> " << bg_out << "\n";
    return 0;
  }

  if (*tr) {
    auto graphs = load_graph_dir(data_dir);
    agm::NormalizationStats st = agm::fit_stats(graphs);
    agm::normalize_graphs(graphs, st);
    fs::path dir(run_dir);
    echo_run(dir, cfg);
    auto res = agm::train<Scalar>(graphs, cfg.train, cfg.model);
    agm::LabelModel<Scalar> model{std::move(res.params), st};
    write_json(dir / "checkpoint.json", agm::checkpoint_to_json(model));
    write_text(dir / "train_log.csv", agm::train_log_csv(res.log));
    std::cout << "trained " << cfg.train.steps << " steps; final loss "
              << res.log.back().mean_loss << "\n";
    return 0;
  }

  auto load_model = [&](const std::string& p) {
    return agm::checkpoint_from_json<Scalar>(read_json(p));
  };

  if (*lb) {
    auto model = load_model(model_path);
    auto g = agm::graph_from_json(read_json(graph_path));
    auto templates = normalize_with(load_graph_dir(tpl_dir), model.stats);
    std::vector<agm::IndividualGraph> one{g};
    one = normalize_with(std::move(one), model.stats);
    auto res = agm::label_graph(model.params, one[0], templates);
    write_json(labels_out, agm::label_result_to_json(res));
    std::cout << "labeled " << g.n() << " nodes -> " << labels_out << "\n";
    return 0;
  }

  if (*ev) {
    auto model = load_model(ev_model);
    auto test = normalize_with(load_graph_dir(ev_data), model.stats);
    auto templates = normalize_with(load_graph_dir(ev_tpl), model.stats);
    fs::path dir(ev_out);
    echo_run(dir, cfg);
    auto r = agm::evaluate_set(model.params, test, templates, "eval");
    write_json(dir / "report.json", agm::report_to_json(r));
    write_text(dir / "report.csv", agm::reports_csv({r}));
    std::cout << "weighted ACC " << r.weighted.acc << " over " << r.cs.n
              << " segments\n";
    return 0;
  }

  if (*im) {
    auto model = load_model(im_model);
    auto test = normalize_with(load_graph_dir(im_data), model.stats);
    auto templates = normalize_with(load_graph_dir(im_tpl), model.stats);
    fs::path dir(im_out);
    echo_run(dir, cfg);
    double base = agm::evaluate_set(model.params, test, templates, "base").weighted.acc;
    std::vector<std::pair<int, double>> deltas;
    for (int f = 0; f < agm::kFeatureDim; ++f)
      deltas.emplace_back(f, agm::feature_importance(model.params, test, templates, f, base));
    std::stable_sort(deltas.begin(), deltas.end(),
                     [](auto& a, auto& b) { return a.second > b.second; });
    std::ostringstream os;
    os.precision(17);
    os << "feature_index,acc_drop\n";
    for (auto& [f, d] : deltas) os << f << "," << d << "\n";
    write_text(dir / "importance.csv", os.str());
    std::cout << "baseline ACC " << base << "; top drop feature " << deltas[0].first
              << " (" << deltas[0].second << ")\n";
    return 0;
  }

  if (*at) {
    auto model = load_model(at_model);
    auto test = normalize_with(load_graph_dir(at_data), model.stats);
    auto templates = normalize_with(load_graph_dir(at_tpl), model.stats);
    fs::path dir(at_out);
    echo_run(dir, cfg);
    std::vector<uint64_t> seeds;
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + uint64_t(i) + 1);
    auto rows = agm::attack_sweep(model.params, test, templates, levels, seeds);
    std::ostringstream os;
    os.precision(17);
    os << "level,weighted_acc,weighted_pre,weighted_rec,weighted_f1\n";
    for (const auto& r : rows)
      os << r.level << "," << r.mean_report.weighted.acc << ","
         << r.mean_report.weighted.pre << "," << r.mean_report.weighted.rec << ","
         << r.mean_report.weighted.f1 << "\n";
    write_text(dir / "attack.csv", os.str());
    std::cout << rows.size() << " levels -> " << (dir / "attack.csv").string() << "\n";
    return 0;
  }

  if (*xv) {
    auto graphs = load_graph_dir(xv_data);
    fs::path dir(xv_out);
    echo_run(dir, cfg);
    auto folds = agm::cross_validate<Scalar>(graphs, tpl_frac, cfg.train, cfg.model,
                                             5, threads);
    std::vector<agm::MetricsReport> reports;
    for (size_t k = 0; k < folds.size(); ++k) {
      reports.push_back(folds[k].report);
      agm::LabelModel<Scalar> model{folds[k].params, folds[k].stats};
      write_json(dir / ("fold" + std::to_string(k) + "_checkpoint.json"),
                 agm::checkpoint_to_json(model));
      write_json(dir / ("fold" + std::to_string(k) + "_report.json"),
                 agm::report_to_json(folds[k].report));
      write_text(dir / ("fold" + std::to_string(k) + "_train_log.csv"),
                 agm::train_log_csv(folds[k].log));
    }
    write_text(dir / "summary.csv", agm::reports_csv(reports));
    double mean_acc = 0;
    for (const auto& r : reports) mean_acc += r.weighted.acc;
    mean_acc /= double(reports.size());
    json summary = {{"schema_version", "agm-xval-1"},
                    {"template_fraction", tpl_frac},
                    {"mean_weighted_acc", mean_acc}};
    summary["folds"] = json::array();
    for (const auto& r : reports) summary["folds"].push_back(agm::report_to_json(r));
    write_json(dir / "summary.json", summary);
    std::cout << "mean weighted ACC " << mean_acc << " over " << folds.size()
              << " folds\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const agm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
