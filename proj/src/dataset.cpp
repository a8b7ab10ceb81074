#include "ellip/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ellip/rng.hpp"

namespace ellip::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- materials

void MaterialTable::validate() const {
  if (samples.size() < 2) throw std::invalid_argument(name + ": need at least 2 samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!(s.n > 0.0) || !(s.k >= 0.0) || !std::isfinite(s.n) || !std::isfinite(s.k))
      throw std::invalid_argument(name + ": n must be > 0 and k >= 0 at every sample");
    if (i > 0 && !(s.lambda_nm > samples[i - 1].lambda_nm))
      throw std::invalid_argument(name + ": wavelengths must be strictly increasing");
  }
}

std::pair<double, double> interpolate_nk(const MaterialTable& table, double lambda_nm) {
  const auto& s = table.samples;
  if (s.empty() || !(lambda_nm >= s.front().lambda_nm && lambda_nm <= s.back().lambda_nm)) {
    std::ostringstream os;
    os << table.name << ": wavelength " << lambda_nm << " nm outside tabulated range";
    throw ExtrapolationError(os.str());
  }
  auto hi = std::lower_bound(s.begin(), s.end(), lambda_nm,
                             [](const MaterialSample& a, double l) { return a.lambda_nm < l; });
  if (hi->lambda_nm == lambda_nm) return {hi->n, hi->k};
  auto lo = hi - 1;
  const double t = (lambda_nm - lo->lambda_nm) / (hi->lambda_nm - lo->lambda_nm);
  return {lo->n + t * (hi->n - lo->n), lo->k + t * (hi->k - lo->k)};
}

namespace {

double parse_double(std::string_view field, std::size_t line, const char* what) {
  // strip surrounding blanks
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
    field.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
    throw ParseError(line, std::string("non-numeric ") + what + " field '" + std::string(field) + "'");
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view chomp(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

MaterialTable read_material_csv(const fs::path& path, std::string name, MaterialRole role) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open material table " + path.string());
  MaterialTable t{std::move(name), role, {}};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  ++line_no;
  if (chomp(line) != "lambda_nm,n,k") throw ParseError(1, "expected header 'lambda_nm,n,k'");
  while (std::getline(in, line)) {
    ++line_no;
    if (chomp(line).empty()) continue;
    auto fields = split_csv(chomp(line));
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 fields");
    t.samples.push_back({parse_double(fields[0], line_no, "lambda_nm"),
                         parse_double(fields[1], line_no, "n"),
                         parse_double(fields[2], line_no, "k")});
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------- splits / plan

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split tag '" + s + "'");
}

void SplitRatios::validate() const {
  if (!(train >= 0.0 && val >= 0.0 && test >= 0.0))
    throw std::invalid_argument("split ratios must be non-negative");
  if (std::abs(train + val + test - 1.0) > 1e-12)
    throw std::invalid_argument("split ratios must sum to 1");
}

void SynthesisPlan::validate() const {
  if (films.empty() || substrates.empty()) throw std::invalid_argument("plan needs films and substrates");
  if (lambda_grid.empty()) throw std::invalid_argument("plan needs a wavelength grid");
  if (thickness_levels.empty()) throw std::invalid_argument("plan needs thickness levels");
  for (double d : thickness_levels)
    if (!(d >= 0.0)) throw std::invalid_argument("thickness levels must be >= 0");
  for (double l : lambda_grid)
    if (!(l > 0.0)) throw std::invalid_argument("wavelengths must be > 0");
  ratios.validate();
  for (const auto& f : films) f.validate();
  for (const auto& s : substrates) s.validate();
  cfg.validate();
}

std::vector<double> uniform_grid(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> g(count);
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) g[i] = lo + step * static_cast<double>(i);
  g.back() = hi;
  return g;
}

std::vector<double> default_lambda_grid(std::size_t count) {
  return uniform_grid(380.28, 999.87, count);
}

std::vector<double> default_thickness_levels(std::size_t count) {
  return uniform_grid(1.0, 96.0, count);
}

// ---------------------------------------------------------------- synthesis

namespace {

struct ComboResult {
  std::vector<EllipsometricRecord> records;
  std::vector<SkippedRecord> skipped;
};

ComboResult synthesize_combo(const SynthesisPlan& plan, const MaterialTable& film,
                             const MaterialTable& substrate) {
  ComboResult out;
  out.records.reserve(plan.lambda_grid.size() * plan.thickness_levels.size());
  for (double lambda : plan.lambda_grid) {
    const auto [n2, k2] = interpolate_nk(film, lambda);
    const auto [n3, k3] = interpolate_nk(substrate, lambda);
    optics::ExperimentConfig cfg = plan.cfg;
    cfg.lambda = lambda;
    for (double d : plan.thickness_levels) {
      EllipsometricRecord r{film.name, substrate.name, lambda, n2, k2, d, n3, k3, 0.0, 0.0,
                            Split::Train};
      try {
        const auto pd = optics::forward(r.stack(), cfg);
        r.psi = pd.psi;
        r.delta = pd.delta;
        out.records.push_back(std::move(r));
      } catch (const optics::OpticsError& e) {
        out.skipped.push_back({film.name, substrate.name, lambda, d, e.what()});
      }
    }
  }
  return out;
}

}  // namespace

std::vector<EllipsometricRecord> synthesize(const SynthesisPlan& plan, SynthesisLog* log) {
  plan.validate();
  for (const auto* group : {&plan.films, &plan.substrates})
    for (const auto& t : *group)
      for (double l : plan.lambda_grid)
        if (l < t.lambda_min() || l > t.lambda_max()) {
          std::ostringstream os;
          os << t.name << ": wavelength " << l << " nm outside tabulated range";
          throw ExtrapolationError(os.str());
        }

  const std::size_t combos = plan.films.size() * plan.substrates.size();
  std::vector<ComboResult> results(combos);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < combos; c = next++) {
      const auto& film = plan.films[c / plan.substrates.size()];
      const auto& sub = plan.substrates[c % plan.substrates.size()];
      results[c] = synthesize_combo(plan, film, sub);
    }
  };
  const unsigned n_workers = std::max(1u, std::min<unsigned>(plan.workers, combos));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  }

  std::vector<EllipsometricRecord> records;
  records.reserve(plan.expected_records());
  for (auto& r : results) {
    records.insert(records.end(), std::make_move_iterator(r.records.begin()),
                   std::make_move_iterator(r.records.end()));
    if (log) log->skipped.insert(log->skipped.end(), r.skipped.begin(), r.skipped.end());
  }
  split_dataset(records, plan.ratios, plan.seed);
  return records;
}

void split_dataset(std::span<EllipsometricRecord> records, const SplitRatios& ratios,
                   std::uint64_t seed) {
  ratios.validate();
  // group indices by combination, in order of first appearance
  std::map<std::pair<std::string, std::string>, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto key = std::pair{records[i].film_id, records[i].substrate_id};
    auto [it, inserted] = group_of.try_emplace(key, groups.size());
    if (inserted) {
      groups.emplace_back();
      labels.push_back(key.first + "/" + key.second);
    }
    groups[it->second].push_back(i);
  }

  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& idx = groups[g];
    Rng rng(derive_seed(seed, labels[g]));
    rng.shuffle(std::span<std::size_t>(idx));

    const double n = static_cast<double>(idx.size());
    const std::array<double, 3> ideal{ratios.train * n, ratios.val * n, ratios.test * n};
    std::array<std::size_t, 3> count{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      count[s] = static_cast<std::size_t>(std::floor(ideal[s]));
      assigned += count[s];
    }
    // largest remainder; ties resolved train, val, test
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return ideal[a] - std::floor(ideal[a]) > ideal[b] - std::floor(ideal[b]);
    });
    for (std::size_t r = 0; assigned < idx.size(); ++r, ++assigned) ++count[order[r % 3]];

    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t c = 0; c < count[s]; ++c) records[idx[pos++]].split = static_cast<Split>(s);
  }
}

// ---------------------------------------------------------------- statistics

namespace {

std::array<double, 5> input_row(const EllipsometricRecord& r) {
  return {r.delta, r.psi, r.n3, r.k3, r.lambda};
}

std::array<double, 3> target_row(const EllipsometricRecord& r) { return {r.n2, r.k2, r.d}; }

template <std::size_t N, class Row>
std::array<ColumnStats, N> column_stats(std::span<const EllipsometricRecord> train, Row row) {
  std::array<ColumnStats, N> out{};
  const double count = static_cast<double>(train.size());
  std::array<double, N> sum{};
  for (const auto& r : train) {
    const auto v = row(r);
    for (std::size_t c = 0; c < N; ++c) sum[c] += v[c];
  }
  for (std::size_t c = 0; c < N; ++c) out[c].mean = sum[c] / count;
  std::array<double, N> ss{};
  for (const auto& r : train) {
    const auto v = row(r);
    for (std::size_t c = 0; c < N; ++c) {
      const double d = v[c] - out[c].mean;
      ss[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < N; ++c) {
    const double sd = std::sqrt(ss[c] / count);
    if (sd > 0.0) {
      out[c].std = sd;
    } else {
      out[c].std = 1.0;
      out[c].constant = true;
    }
  }
  return out;
}

}  // namespace

std::array<double, 5> NormStats::normalize_inputs(const EllipsometricRecord& r) const {
  const auto v = input_row(r);
  std::array<double, 5> out{};
  for (std::size_t c = 0; c < 5; ++c) out[c] = (v[c] - inputs[c].mean) / inputs[c].std;
  return out;
}

std::array<double, 3> NormStats::normalize_targets(const EllipsometricRecord& r) const {
  const auto v = target_row(r);
  std::array<double, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) out[c] = (v[c] - targets[c].mean) / targets[c].std;
  return out;
}

NormStats compute_norm_stats(std::span<const EllipsometricRecord> records) {
  const auto train = filter_split(records, Split::Train);
  if (train.empty()) throw std::invalid_argument("normalization needs a non-empty training split");
  NormStats s;
  s.inputs = column_stats<5>(train, input_row);
  s.targets = column_stats<3>(train, target_row);
  return s;
}

std::vector<EllipsometricRecord> filter_split(std::span<const EllipsometricRecord> records,
                                              Split split) {
  std::vector<EllipsometricRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

Dataset build_dataset(const SynthesisPlan& plan, SynthesisLog* log) {
  Dataset ds;
  ds.records = synthesize(plan, log);
  Manifest& m = ds.manifest;
  m.theta1_deg = plan.cfg.theta1_deg;
  m.n1 = plan.cfg.n1;
  m.k1 = plan.cfg.k1;
  m.seed = plan.seed;
  m.ratios = plan.ratios;
  m.norm = compute_norm_stats(ds.records);
  m.record_count = ds.records.size();
  for (const auto& f : plan.films) m.films.push_back(f.name);
  for (const auto& s : plan.substrates) m.substrates.push_back(s.name);
  return ds;
}

// ---------------------------------------------------------------- I/O

fs::path manifest_path_for(const fs::path& csv_path) {
  fs::path p = csv_path;
  p += ".manifest.json";
  return p;
}

namespace {

json stats_json(const ColumnStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"constant", s.constant}};
}

ColumnStats stats_from_json(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("constant").get<bool>()};
}

json manifest_json(const Manifest& m) {
  json inputs = json::object(), targets = json::object();
  for (std::size_t c = 0; c < kInputColumns.size(); ++c) inputs[kInputColumns[c]] = stats_json(m.norm.inputs[c]);
  for (std::size_t c = 0; c < kTargetColumns.size(); ++c)
    targets[kTargetColumns[c]] = stats_json(m.norm.targets[c]);
  json cols = json::array();
  for (const char* c : kDatasetColumns) cols.push_back(c);
  return {
      {"generator_version", m.generator_version},
      {"theta1_deg", m.theta1_deg},
      {"n1", m.n1},
      {"k1", m.k1},
      {"seed", m.seed},
      {"ratios", {{"train", m.ratios.train}, {"val", m.ratios.val}, {"test", m.ratios.test}}},
      {"columns", cols},
      {"record_count", m.record_count},
      {"films", m.films},
      {"substrates", m.substrates},
      {"normalization", {{"scheme", "z-score, training split, population std"},
                         {"inputs", inputs},
                         {"targets", targets}}},
  };
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.generator_version = j.at("generator_version").get<std::string>();
  m.theta1_deg = j.at("theta1_deg").get<double>();
  m.n1 = j.at("n1").get<double>();
  m.k1 = j.at("k1").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto& r = j.at("ratios");
  m.ratios = {r.at("train").get<double>(), r.at("val").get<double>(), r.at("test").get<double>()};
  const auto& cols = j.at("columns");
  if (cols.size() != kDatasetColumns.size())
    throw std::runtime_error("manifest column order does not match this reader");
  for (std::size_t c = 0; c < kDatasetColumns.size(); ++c)
    if (cols[c].get<std::string>() != kDatasetColumns[c])
      throw std::runtime_error("manifest column order does not match this reader");
  m.record_count = j.at("record_count").get<std::size_t>();
  m.films = j.at("films").get<std::vector<std::string>>();
  m.substrates = j.at("substrates").get<std::vector<std::string>>();
  const auto& norm = j.at("normalization");
  for (std::size_t c = 0; c < kInputColumns.size(); ++c)
    m.norm.inputs[c] = stats_from_json(norm.at("inputs").at(kInputColumns[c]));
  for (std::size_t c = 0; c < kTargetColumns.size(); ++c)
    m.norm.targets[c] = stats_from_json(norm.at("targets").at(kTargetColumns[c]));
  return m;
}

void append_double(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

std::string header_line() {
  std::string h;
  for (std::size_t c = 0; c < kDatasetColumns.size(); ++c) {
    if (c) h += ',';
    h += kDatasetColumns[c];
  }
  return h;
}

}  // namespace

std::string manifest_to_json(const Manifest& m) { return manifest_json(m).dump(2); }

Manifest manifest_from_json_text(const std::string& text) {
  return manifest_from_json(json::parse(text));
}

void write_dataset(const fs::path& csv_path, const Dataset& dataset) {
  std::string body = header_line() + "\n";
  for (const auto& r : dataset.records) {
    body += r.film_id;
    body += ',';
    body += r.substrate_id;
    for (double v : {r.lambda, r.n2, r.k2, r.d, r.n3, r.k3, r.psi, r.delta}) {
      body += ',';
      append_double(body, v);
    }
    body += ',';
    body += split_name(r.split);
    body += '\n';
  }
  Manifest m = dataset.manifest;
  m.record_count = dataset.records.size();

  // Write to temporaries first so a failure never leaves partial outputs.
  const fs::path mpath = manifest_path_for(csv_path);
  const fs::path tmp_csv = fs::path(csv_path) += ".tmp";
  const fs::path tmp_manifest = fs::path(mpath) += ".tmp";
  {
    std::ofstream out(tmp_csv, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
    out << body;
    if (!out) throw std::runtime_error("write failed for " + csv_path.string());
  }
  {
    std::ofstream out(tmp_manifest, std::ios::binary | std::ios::trunc);
    if (!out) {
      fs::remove(tmp_csv);
      throw std::runtime_error("cannot write " + mpath.string());
    }
    out << manifest_json(m).dump(2) << "\n";
  }
  fs::rename(tmp_csv, csv_path);
  fs::rename(tmp_manifest, mpath);
}

Dataset read_dataset(const fs::path& csv_path) {
  Dataset ds;
  {
    std::ifstream in(manifest_path_for(csv_path));
    if (!in) throw std::runtime_error("missing manifest " + manifest_path_for(csv_path).string());
    ds.manifest = manifest_from_json(json::parse(in));
  }
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + csv_path.string());
  std::string line;
  if (!std::getline(in, line) || chomp(line) != header_line())
    throw ParseError(1, "dataset header does not match the expected column order");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = chomp(line);
    if (text.empty()) continue;
    const auto f = split_csv(text);
    if (f.size() != kDatasetColumns.size())
      throw ParseError(line_no, "expected " + std::to_string(kDatasetColumns.size()) + " fields, got " +
                                    std::to_string(f.size()));
    EllipsometricRecord r;
    r.film_id = std::string(f[0]);
    r.substrate_id = std::string(f[1]);
    double* dst[] = {&r.lambda, &r.n2, &r.k2, &r.d, &r.n3, &r.k3, &r.psi, &r.delta};
    for (std::size_t c = 0; c < 8; ++c) *dst[c] = parse_double(f[c + 2], line_no, kDatasetColumns[c + 2]);
    try {
      r.split = parse_split(std::string(f[10]));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    ds.records.push_back(std::move(r));
  }
  if (ds.records.size() != ds.manifest.record_count)
    throw std::runtime_error("dataset has " + std::to_string(ds.records.size()) +
                             " records but manifest declares " +
                             std::to_string(ds.manifest.record_count));
  return ds;
}

}  // namespace ellip::data
