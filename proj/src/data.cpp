#include "pphh/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pphh::data {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

}  // namespace

FeatureSchema load_schema(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open schema: " + path);
  FeatureSchema s;
  std::string line;
  while (std::getline(f, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("bad schema line: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "entity") s.entity_col = val;
    else if (key == "order_key") s.order_key_col = val;
    else if (key == "label") s.label_col = val;
    else if (key == "label_mode") s.label_mode = val;
    else if (key == "task") s.task = (val == "regression") ? nn::Task::kRegression : nn::Task::kClassification;
    else if (key == "numeric")
      for (auto& c : split(val, ',')) s.numeric_cols.push_back(trim(c));
    else if (key == "categorical")
      for (auto& c : split(val, ',')) s.categorical_cols.push_back(trim(c));
    else throw DataError("unknown schema key: " + key);
  }
  if (s.entity_col.empty() || s.order_key_col.empty() || s.label_col.empty())
    throw DataError("schema must define entity, order_key, and label");
  return s;
}

SequenceDataset load_csv(const std::string& path, const FeatureSchema& schema, NormStats* stats) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open csv: " + path);
  std::string header;
  if (!std::getline(f, header)) throw DataError("empty csv: " + path);
  auto cols = split(trim(header), ',');
  std::map<std::string, size_t> col_idx;
  for (size_t i = 0; i < cols.size(); ++i) col_idx[trim(cols[i])] = i;

  auto need = [&](const std::string& c) {
    auto it = col_idx.find(c);
    if (it == col_idx.end()) throw DataError("missing column '" + c + "' in " + path);
    return it->second;
  };
  size_t ie = need(schema.entity_col), ik = need(schema.order_key_col), il = need(schema.label_col);
  std::vector<size_t> inum, icat;
  for (auto& c : schema.numeric_cols) inum.push_back(need(c));
  for (auto& c : schema.categorical_cols) icat.push_back(need(c));

  struct Row {
    std::string entity;
    int64_t key;
    double label;
    std::vector<double> nums;
    std::vector<std::string> cats;
  };
  std::vector<Row> rows;
  std::string line;
  int64_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() < cols.size())
      throw DataError("unparseable row at line " + std::to_string(line_no) + ": expected " +
                      std::to_string(cols.size()) + " fields, got " + std::to_string(fields.size()));
    Row r;
    r.entity = trim(fields[ie]);
    try {
      r.key = std::stoll(trim(fields[ik]));
      r.label = std::stod(trim(fields[il]));
      for (size_t i : inum) r.nums.push_back(std::stod(trim(fields[i])));
    } catch (const std::exception&) {
      throw DataError("unparseable numeric value at line " + std::to_string(line_no));
    }
    for (size_t i : icat) r.cats.push_back(trim(fields[i]));
    rows.push_back(std::move(r));
  }

  bool build_stats = stats == nullptr || stats->empty();
  NormStats local;
  NormStats& st = stats ? *stats : local;
  if (build_stats) {
    for (size_t c = 0; c < schema.numeric_cols.size(); ++c) {
      double mean = 0;
      for (auto& r : rows) mean += r.nums[c];
      mean /= static_cast<double>(rows.size());
      double var = 0;
      for (auto& r : rows) var += (r.nums[c] - mean) * (r.nums[c] - mean);
      var /= static_cast<double>(rows.size());
      st.mean_std[schema.numeric_cols[c]] = {mean, std::sqrt(std::max(var, 1e-12))};
    }
    for (size_t c = 0; c < schema.categorical_cols.size(); ++c) {
      auto& v = st.vocab[schema.categorical_cols[c]];
      for (auto& r : rows)
        if (!v.count(r.cats[c])) v[r.cats[c]] = static_cast<int64_t>(v.size()) + 1;  // 0 reserved: UNK
    }
  }

  std::map<std::string, std::vector<Row*>> groups;
  for (auto& r : rows) groups[r.entity].push_back(&r);

  SequenceDataset ds;
  ds.task = schema.task;
  ds.feature_dim = static_cast<int>(schema.numeric_cols.size() + schema.categorical_cols.size());
  int64_t sid = 0;
  for (auto& [entity, gr] : groups) {
    if (gr.empty()) throw DataError("empty entity group: " + entity);
    std::stable_sort(gr.begin(), gr.end(), [](const Row* a, const Row* b) { return a->key < b->key; });
    SequenceRecord rec;
    rec.seq_id = sid++;
    double any_label = 0, last_label = 0;
    for (Row* r : gr) {
      TimeStep t;
      t.order_key = r->key;
      for (size_t c = 0; c < schema.numeric_cols.size(); ++c) {
        auto [m, s] = st.mean_std.at(schema.numeric_cols[c]);
        t.features.push_back((r->nums[c] - m) / s);
      }
      for (size_t c = 0; c < schema.categorical_cols.size(); ++c) {
        const auto& v = st.vocab.at(schema.categorical_cols[c]);
        auto it = v.find(r->cats[c]);
        int64_t idx = it == v.end() ? 0 : it->second;  // unseen token -> UNK
        t.features.push_back(static_cast<double>(idx));
      }
      rec.steps.push_back(std::move(t));
      any_label = std::max(any_label, r->label);
      last_label = r->label;
    }
    // keys must be strictly increasing within an entity; disambiguate ties by arrival order
    for (size_t i = 1; i < rec.steps.size(); ++i)
      if (rec.steps[i].order_key <= rec.steps[i - 1].order_key)
        rec.steps[i].order_key = rec.steps[i - 1].order_key + 1;
    rec.label = schema.label_mode == "last_value" ? last_label : any_label;
    if (schema.label_mode == "last_value" && rec.steps.size() > 1) rec.steps.pop_back();
    ds.max_len = std::max(ds.max_len, static_cast<int>(rec.steps.size()));
    ds.records.push_back(std::move(rec));
  }
  ds.train_idx.resize(ds.records.size());
  for (size_t i = 0; i < ds.records.size(); ++i) ds.train_idx[i] = static_cast<int64_t>(i);
  return ds;
}

SequenceDataset synth_classification(int n_seqs, int n_clients, uint64_t seed, int len_min, int len_max) {
  (void)n_clients;  // partitioning happens downstream; kept so leakage geometry is caller-visible
  if (len_min < 4 || len_max < len_min) throw DataError("synth_classification: bad length range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_d(len_min, len_max);
  std::normal_distribution<double> noise(0.0, 1.0);
  constexpr int kFeatureDim = 6;
  constexpr double kBurstShift = 10.0;

  // exact 30/70 balance, shuffled
  std::vector<int> labels(n_seqs, 0);
  for (int i = 0; i < (n_seqs * 3) / 10; ++i) labels[i] = 1;
  std::shuffle(labels.begin(), labels.end(), rng);

  SequenceDataset ds;
  ds.task = nn::Task::kClassification;
  ds.feature_dim = kFeatureDim;
  for (int s = 0; s < n_seqs; ++s) {
    SequenceRecord rec;
    rec.seq_id = s;
    rec.label = labels[s];
    int len = len_d(rng);
    std::vector<double> state(kFeatureDim, 0.0);
    int burst_at = -1;
    if (labels[s]) burst_at = std::uniform_int_distribution<int>(0, len - 3)(rng);
    for (int t = 0; t < len; ++t) {
      TimeStep step;
      step.order_key = 1000 * (s + 1) + t;  // strictly increasing, globally distinct
      for (int f = 0; f < kFeatureDim; ++f) {
        state[f] = 0.8 * state[f] + noise(rng);
        double v = state[f];
        if (f == 0 && burst_at >= 0 && t >= burst_at && t < burst_at + 3) v += kBurstShift;
        step.features.push_back(v);
      }
      rec.steps.push_back(std::move(step));
    }
    ds.max_len = std::max(ds.max_len, len);
    ds.records.push_back(std::move(rec));
  }
  int64_t n_train = (n_seqs * 3) / 4;
  for (int64_t i = 0; i < n_seqs; ++i)
    (i < n_train ? ds.train_idx : ds.test_idx).push_back(i);
  return ds;
}

double oracle_detector_accuracy(const SequenceDataset& ds) {
  constexpr double kThreshold = 6.0;
  int64_t correct = 0;
  for (const auto& rec : ds.records) {
    double best = -1e300;
    for (size_t t = 0; t + 2 < rec.steps.size(); ++t) {
      double m = (rec.steps[t].features[0] + rec.steps[t + 1].features[0] + rec.steps[t + 2].features[0]) / 3;
      best = std::max(best, m);
    }
    int pred = best > kThreshold ? 1 : 0;
    correct += (pred == static_cast<int>(rec.label));
  }
  return static_cast<double>(correct) / static_cast<double>(ds.records.size());
}

SequenceDataset synth_regression(int n_seqs, uint64_t seed, double noise_sigma) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_d(28, 84);
  std::uniform_real_distribution<double> slope_d(-0.05, 0.05), amp_d(1.0, 3.0), phase_d(0.0, 6.28318),
      base_d(0.0, 8.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SequenceDataset ds;
  ds.task = nn::Task::kRegression;
  ds.feature_dim = 3;  // value, sin(day), cos(day)
  ds.noise_floor_rmse = noise_sigma;
  for (int s = 0; s < n_seqs; ++s) {
    SequenceRecord rec;
    rec.seq_id = s;
    int len = len_d(rng);
    double a = slope_d(rng), A = amp_d(rng), phi = phase_d(rng), b = base_d(rng);
    for (int t = 0; t < len; ++t) {
      double y = a * t + A * std::sin(2 * M_PI * t / 7.0 + phi) + b + noise_sigma * noise(rng);
      if (t == len - 1) {
        rec.label = y;  // final value is the target, not an input
        break;
      }
      TimeStep step;
      step.order_key = 1000 * (s + 1) + t;
      step.features = {y, std::sin(2 * M_PI * t / 7.0), std::cos(2 * M_PI * t / 7.0)};
      rec.steps.push_back(std::move(step));
    }
    ds.max_len = std::max(ds.max_len, static_cast<int>(rec.steps.size()));
    ds.records.push_back(std::move(rec));
  }
  int64_t n_train = (n_seqs * 3) / 4;
  for (int64_t i = 0; i < n_seqs; ++i)
    (i < n_train ? ds.train_idx : ds.test_idx).push_back(i);
  return ds;
}

BatchIter::BatchIter(const SequenceDataset& ds, std::vector<int64_t> indices, int batch_size, uint64_t seed)
    : ds_(ds), indices_(std::move(indices)), batch_size_(batch_size), rng_(seed) {
  if (batch_size_ < 1) throw DataError("batch_size must be >= 1");
  std::shuffle(indices_.begin(), indices_.end(), rng_);
}

bool BatchIter::next(Batch& out) {
  if (pos_ >= indices_.size()) return false;
  out.record_idx.clear();
  out.max_len = 0;
  size_t end = std::min(pos_ + static_cast<size_t>(batch_size_), indices_.size());
  for (size_t i = pos_; i < end; ++i) {
    out.record_idx.push_back(indices_[i]);
    out.max_len = std::max(out.max_len, static_cast<int>(ds_.records[indices_[i]].steps.size()));
  }
  pos_ = end;
  return true;
}

void BatchIter::reset() {
  pos_ = 0;
  std::shuffle(indices_.begin(), indices_.end(), rng_);
}

std::vector<int> assign_clients(int len, int n_clients, std::mt19937_64& rng) {
  if (n_clients < 2) throw DataError("partitioning requires n_clients >= 2");
  if (len < n_clients) throw DataError("sequence of length " + std::to_string(len) +
                                       " cannot be split across " + std::to_string(n_clients) + " clients");
  std::uniform_int_distribution<int> d(0, n_clients - 1);
  std::vector<int> owner(len);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<int> count(n_clients, 0);
    for (int i = 0; i < len; ++i) {
      owner[i] = d(rng);
      count[owner[i]]++;
    }
    bool ok = true;
    for (int c : count) ok &= (c > 0);
    if (ok) return owner;
  }
  throw DataError("could not draw a partition with all clients non-empty");
}

}  // namespace pphh::data
