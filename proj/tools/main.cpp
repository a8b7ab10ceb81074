#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "ellip/gradcheck_suite.hpp"
#include "ellip/invert.hpp"
#include "ellip/train.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace ellip;
using json = nlohmann::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> threshold;
  std::optional<double> theta1_deg;
  std::string loss_weights;
  std::string device_precision;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool out_required) {
  cmd->add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Seed for every random stream");
  auto* out = cmd->add_option("--out", f.out, "Output directory (must not exist or be empty)");
  if (out_required) out->required();
  cmd->add_option("--threshold", f.threshold, "Accuracy threshold in normalized target units");
  cmd->add_option("--theta1-deg", f.theta1_deg, "Angle of incidence in degrees");
  cmd->add_option("--loss-weights", f.loss_weights, "fit,recon loss weights");
  cmd->add_option("--device-precision", f.device_precision, "Arithmetic precision (float64 only)");
  cmd->add_option("--set", f.sets, "Override any config field: section.key=JSON value");
}

void apply_set(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw cli::ConfigError("--set expects key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings
  }
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key))
      throw cli::ConfigError("unknown key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

cli::RunConfig effective_config(const CommonFlags& f) {
  cli::RunConfig c = f.config_path.empty() ? cli::RunConfig::defaults() : cli::load_run_config(f.config_path);
  if (!f.sets.empty()) {
    json j = json::parse(cli::run_config_json(c));
    for (const auto& s : f.sets) apply_set(j, s);
    c = cli::parse_run_config(j.dump());
  }
  if (f.seed) c.seed = *f.seed;
  if (f.threshold) c.train.eval_threshold = *f.threshold;
  if (f.theta1_deg) c.theta1_deg = *f.theta1_deg;
  if (!f.loss_weights.empty()) c.train.weights = cli::parse_loss_weights(f.loss_weights);
  if (!f.device_precision.empty()) {
    const std::string& p = f.device_precision;
    if (p == "64" || p == "fp64" || p == "float64" || p == "double") c.device_precision = "float64";
    else throw cli::ConfigError("--device-precision: only 64-bit floating point is supported");
  }
  c.sync_seeds();
  c.validate();
  return c;
}

/// Output directory built under a staging name and renamed into place on
/// success, so a failed command leaves nothing behind.
class RunDir {
public:
  explicit RunDir(const std::string& out) : final_(out) {
    if (out.empty()) throw std::runtime_error("--out is required");
    if (fs::exists(final_) && (!fs::is_directory(final_) || !fs::is_empty(final_)))
      throw std::runtime_error("output path " + final_.string() + " exists and is not an empty directory");
    staging_ = final_;
    staging_ += ".partial";
    fs::remove_all(staging_);
    if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
    fs::create_directory(staging_);
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;
  ~RunDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  fs::path path(const std::string& name) const { return staging_ / name; }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream out(path(name), std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + (final_ / name).string());
  }

  void commit() {
    if (fs::exists(final_)) fs::remove(final_);
    fs::rename(staging_, final_);
    committed_ = true;
  }

  const fs::path& final_path() const { return final_; }

private:
  fs::path final_;
  fs::path staging_;
  bool committed_ = false;
};

void check_theta(const CommonFlags& f, const data::Manifest& m) {
  if (f.theta1_deg && *f.theta1_deg != m.theta1_deg)
    throw cli::ConfigError("dataset was synthesized at theta1 = " + std::to_string(m.theta1_deg) +
                           " deg; --theta1-deg disagrees");
}

int cmd_synth(const CommonFlags& f) {
  const cli::RunConfig cfg = effective_config(f);
  RunDir dir(f.out);
  data::SynthesisLog log;
  const data::SynthesisPlan plan = cli::synthesis_plan(cfg);
  const data::Dataset ds = data::build_dataset(plan, &log);
  data::write_dataset(dir.path("dataset.csv"), ds);

  // per-combination split counts, in synthesis order
  std::vector<std::string> order;
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (const auto& r : ds.records) {
    const std::string key = r.film_id + "/" + r.substrate_id;
    if (!counts.count(key)) order.push_back(key);
    counts[key][static_cast<std::size_t>(r.split)]++;
  }
  std::ostringstream report;
  report << "records " << ds.records.size() << " (expected " << plan.expected_records() << ", skipped "
         << log.skipped.size() << ")\n";
  std::array<std::size_t, 3> totals{};
  for (const auto& r : ds.records) totals[static_cast<std::size_t>(r.split)]++;
  report << "train " << totals[0] << " val " << totals[1] << " test " << totals[2] << "\n";
  report << "combination,train,val,test\n";
  for (const auto& key : order)
    report << key << "," << counts[key][0] << "," << counts[key][1] << "," << counts[key][2] << "\n";
  for (const auto& s : log.skipped)
    report << "skipped " << s.film_id << "/" << s.substrate_id << " lambda=" << s.lambda << " d=" << s.d
           << ": " << s.reason << "\n";

  dir.write("config.json", cli::run_config_json(cfg));
  dir.write("synth_log.txt", report.str());
  dir.commit();
  std::cout << report.str() << "wrote " << (dir.final_path() / "dataset.csv").string() << "\n";
  return 0;
}

int cmd_train(const CommonFlags& f, const std::string& data_path) {
  const cli::RunConfig cfg = effective_config(f);
  const data::Dataset ds = data::read_dataset(data_path);
  check_theta(f, ds.manifest);
  RunDir dir(f.out);
  const auto start = std::chrono::steady_clock::now();
  const train::TrainResult result = train::train_loop(
      nn::InverseNet(cfg.net), ds, cfg.train, [](const train::EpochRecord& r) {
        std::printf("epoch %zu fit %.6g recon %.6g val %s\n", r.epoch, r.train_fit, r.train_recon,
                    train::metrics_row(r.val).c_str());
        std::fflush(stdout);
      });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto test = data::filter_split(ds.records, data::Split::Test);
  std::ostringstream metrics;
  metrics << "best_epoch " << result.best_epoch << "\n";
  metrics << "val  " << train::metrics_row(result.best_val) << "\n";
  if (!test.empty()) {
    const train::Metrics tm = train::evaluate(result.best, test, ds.manifest.norm, cfg.train.eval_threshold);
    metrics << "test " << train::metrics_row(tm) << "\n";
  }
  metrics << "steps " << result.steps << " recon_evaluations " << result.recon_evaluations << "\n";
  if (result.aborted) metrics << "aborted: " << result.abort_reason << "\n";

  nn::write_checkpoint(dir.path("checkpoint.txt"), result.best,
                       train::checkpoint_metadata(ds.manifest, cfg.train, result));
  dir.write("history.csv", train::history_csv(result.history));
  dir.write("metrics.txt", metrics.str());
  dir.write("config.json", cli::run_config_json(cfg));
  dir.commit();
  std::cout << metrics.str();
  std::fprintf(stderr, "training took %.1f s\n", seconds);
  return result.aborted ? 1 : 0;
}

ad::Tensor read_predictions(const std::string& path, const data::NormStats& norm, std::size_t rows) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("n2,k2,d", 0) != 0)
    throw std::runtime_error("predictions file must start with header n2,k2,d");
  ad::Tensor pred(rows, 3);
  std::size_t r = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (r >= rows) throw std::runtime_error("more predictions than records");
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t c = 0; c < 3; ++c) {
      if (!std::getline(ls, cell, ',')) throw std::runtime_error("short prediction line " + std::to_string(r + 2));
      pred(r, c) = (std::stod(cell) - norm.targets[c].mean) / norm.targets[c].std;
    }
    ++r;
  }
  if (r != rows) throw std::runtime_error("expected " + std::to_string(rows) + " predictions, got " + std::to_string(r));
  return pred;
}

int cmd_eval(const CommonFlags& f, const std::string& data_path, const std::string& checkpoint,
             const std::string& predictions, const std::string& split_name) {
  const cli::RunConfig cfg = effective_config(f);
  const data::Dataset ds = data::read_dataset(data_path);
  check_theta(f, ds.manifest);
  const auto records = data::filter_split(ds.records, data::parse_split(split_name));
  if (records.empty()) throw std::runtime_error("split '" + split_name + "' is empty");
  if (checkpoint.empty() == predictions.empty())
    throw cli::ConfigError("eval needs exactly one of --checkpoint or --predictions");

  train::Metrics m;
  if (!checkpoint.empty()) {
    const nn::Checkpoint ck = nn::read_checkpoint(checkpoint);
    data::NormStats norm = ds.manifest.norm;
    try {
      norm = train::manifest_from_metadata(ck.metadata).norm;
    } catch (const std::exception&) {
    }
    m = train::evaluate(ck.net, records, norm, cfg.train.eval_threshold);
  } else {
    m = train::compute_metrics(read_predictions(predictions, ds.manifest.norm, records.size()),
                               train::target_matrix(records, ds.manifest.norm), cfg.train.eval_threshold);
  }
  const std::string row = train::metrics_row(m);
  std::cout << "accuracy_n2 accuracy_k2 accuracy_d MAE R2\n" << row << "\n";
  if (!f.out.empty()) {
    RunDir dir(f.out);
    char buf[256];
    std::snprintf(buf, sizeof buf, "split,count,accuracy_n2,accuracy_k2,accuracy_d,mae,r2\n%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  split_name.c_str(), m.count, m.accuracy[0], m.accuracy[1], m.accuracy[2], m.mae, m.r2);
    dir.write("metrics.csv", buf);
    dir.write("config.json", cli::run_config_json(cfg));
    dir.commit();
  }
  return 0;
}

std::array<double, 5> parse_sample(const std::string& text) {
  std::array<double, 5> v{};
  std::istringstream ss(text);
  std::string cell;
  for (std::size_t i = 0; i < 5; ++i) {
    if (!std::getline(ss, cell, ',')) throw cli::ConfigError("--sample expects n3,k3,lambda,psi,delta");
    v[i] = std::stod(cell);
  }
  if (std::getline(ss, cell, ',')) throw cli::ConfigError("--sample expects exactly five values");
  return v;
}

int cmd_invert(const CommonFlags& f, const std::string& data_path, const std::vector<std::size_t>& indices,
               const std::string& sample) {
  const cli::RunConfig cfg = effective_config(f);
  struct Job {
    std::string label;
    invert::FitProblem problem;
    std::optional<data::EllipsometricRecord> truth;
  };
  std::vector<Job> jobs;
  auto configure = [&](invert::FitProblem p) {
    p.bounds = cfg.invert.bounds;
    p.starts = cfg.invert.starts;
    p.tol = cfg.invert.tol;
    p.dedup_radius = cfg.invert.dedup_radius;
    p.max_iterations = cfg.invert.max_iterations;
    p.workers = cfg.invert.workers;
    p.seed = cfg.seed;
    return p;
  };
  if (!sample.empty()) {
    const auto s = parse_sample(sample);
    jobs.push_back({"sample", configure(invert::FitProblem::for_sample(
                                  s[0], s[1], s[2], s[3], s[4], {cfg.theta1_deg, cfg.n1, cfg.k1})),
                    std::nullopt});
  }
  if (!data_path.empty()) {
    const data::Dataset ds = data::read_dataset(data_path);
    check_theta(f, ds.manifest);
    for (std::size_t i : indices) {
      if (i >= ds.records.size()) throw std::out_of_range("record index " + std::to_string(i) + " out of range");
      const auto& r = ds.records[i];
      jobs.push_back({"record " + std::to_string(i),
                      configure(invert::FitProblem::for_sample(r.n3, r.k3, r.lambda, r.psi, r.delta,
                                                               loss::Geometry::from_manifest(ds.manifest))),
                      r});
    }
  }
  if (jobs.empty()) throw cli::ConfigError("invert needs --sample or --data with --index");

  RunDir dir(f.out);
  std::string csv = "job,rank,n2,k2,d,residual,start\n";
  bool any_solution = false;
  for (const auto& job : jobs) {
    const invert::FitResult res = invert::solve(job.problem);
    std::cout << job.label << ": " << res.report();
    if (job.truth)
      std::printf("  truth n2=%.10g k2=%.10g d=%.10g\n", job.truth->n2, job.truth->k2, job.truth->d);
    any_solution = any_solution || res.found();
    for (std::size_t k = 0; k < res.minima.size(); ++k) {
      const auto& m = res.minima[k];
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g,%.17g,%zu\n", job.label.c_str(), k,
                    m.params[0], m.params[1], m.params[2], m.residual, m.start);
      csv += buf;
    }
  }
  dir.write("minima.csv", csv);
  dir.write("config.json", cli::run_config_json(cfg));
  dir.commit();
  return any_solution ? 0 : 2;
}

int cmd_gradcheck(const CommonFlags& f, std::size_t points) {
  const cli::RunConfig cfg = effective_config(f);
  ad::SuiteOptions opt;
  opt.points = points;
  opt.seed = cfg.seed;
  const auto results = ad::run_gradcheck_suite(opt);
  const std::string report = ad::suite_report(results);
  bool pass = true;
  for (const auto& r : results) pass = pass && r.pass();
  std::cout << report << (pass ? "all gradient checks passed\n" : "gradient check FAILED\n");
  if (!f.out.empty()) {
    RunDir dir(f.out);
    dir.write("gradcheck.txt", report);
    dir.write("config.json", cli::run_config_json(cfg));
    dir.commit();
  }
  return pass ? 0 : 1;
}

int cmd_ablate(const CommonFlags& f, const std::string& data_path, const std::vector<std::string>& only) {
  const cli::RunConfig cfg = effective_config(f);
  const data::Dataset ds = data::read_dataset(data_path);
  check_theta(f, ds.manifest);
  RunDir dir(f.out);
  auto variants = train::ablation_variants(cfg.net, cfg.train);
  if (!only.empty()) {
    std::erase_if(variants, [&](const train::AblationVariant& v) {
      return std::find(only.begin(), only.end(), v.name) == only.end();
    });
    if (variants.empty()) throw cli::ConfigError("--variant matched nothing");
  }
  const auto rows = train::ablation_suite(ds, variants, [](const std::string& msg) {
    std::cout << msg << "\n" << std::flush;
  });
  const std::string table = train::ablation_table(rows);
  std::string csv = "model,accuracy_n2,accuracy_k2,accuracy_d,mae,r2,best_epoch,recon_evaluations\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%zu\n", r.name.c_str(),
                  r.test.accuracy[0], r.test.accuracy[1], r.test.accuracy[2], r.test.mae, r.test.r2,
                  r.result.best_epoch, r.result.recon_evaluations);
    csv += buf;
    dir.write("history_" + r.name + ".csv", train::history_csv(r.result.history));
  }
  dir.write("ablation.txt", table);
  dir.write("ablation.csv", csv);
  dir.write("config.json", cli::run_config_json(cfg));
  dir.commit();
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thin-film ellipsometry inversion toolkit"};
  app.require_subcommand(1);

  CommonFlags synth_f, train_f, eval_f, invert_f, grad_f, ablate_f;
  std::string train_data, eval_data, eval_ckpt, eval_pred, eval_split = "test", invert_data, invert_sample,
      ablate_data;
  std::vector<std::size_t> invert_index;
  std::vector<std::string> ablate_only;
  std::size_t grad_points = 100;

  auto* synth = app.add_subcommand("synth", "Synthesize a dataset");
  add_common(synth, synth_f, true);

  auto* trn = app.add_subcommand("train", "Train the inverse network");
  add_common(trn, train_f, true);
  trn->add_option("--data", train_data, "Dataset CSV")->required()->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
  add_common(ev, eval_f, false);
  ev->add_option("--data", eval_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->check(CLI::ExistingFile);
  ev->add_option("--predictions", eval_pred, "CSV n2,k2,d (physical units) in split order")
      ->check(CLI::ExistingFile);
  ev->add_option("--split", eval_split, "train, val or test");

  auto* inv = app.add_subcommand("invert", "Multi-start least-squares inversion");
  add_common(inv, invert_f, true);
  inv->add_option("--data", invert_data, "Dataset CSV")->check(CLI::ExistingFile);
  inv->add_option("--index", invert_index, "Record indices in the dataset");
  inv->add_option("--sample", invert_sample, "n3,k3,lambda,psi,delta");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_common(gc, grad_f, false);
  gc->add_option("--points", grad_points, "Random points per case");

  auto* abl = app.add_subcommand("ablate", "Train the ablation variants and compare");
  add_common(abl, ablate_f, true);
  abl->add_option("--data", ablate_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  abl->add_option("--variant", ablate_only, "Restrict to named variants");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(synth_f);
    if (*trn) return cmd_train(train_f, train_data);
    if (*ev) return cmd_eval(eval_f, eval_data, eval_ckpt, eval_pred, eval_split);
    if (*inv) return cmd_invert(invert_f, invert_data, invert_index, invert_sample);
    if (*gc) return cmd_gradcheck(grad_f, grad_points);
    if (*abl) return cmd_ablate(ablate_f, ablate_data, ablate_only);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
