#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "pphh/data.hpp"

using namespace pphh;
using namespace pphh::data;

static std::string write_tmp(const std::string& name, const std::string& content) {
  std::string path = "/tmp/pphh_" + name;
  std::ofstream f(path);
  f << content;
  return path;
}

TEST_CASE("schema parsing") {
  auto p = write_tmp("schema.cfg",
                     "# toy schema\n"
                     "entity = user\n"
                     "order_key = ts\n"
                     "label = fraud\n"
                     "label_mode = any\n"
                     "task = classification\n"
                     "numeric = amount\n"
                     "categorical = merchant, city\n");
  auto s = load_schema(p);
  CHECK(s.entity_col == "user");
  CHECK(s.numeric_cols.size() == 1);
  CHECK(s.categorical_cols.size() == 2);
  std::remove(p.c_str());

  auto bad = write_tmp("schema_bad.cfg", "entity = u\n");
  CHECK_THROWS_AS(load_schema(bad), DataError);
  std::remove(bad.c_str());
}

TEST_CASE("csv loading: toy fixture in key order") {
  auto sp = write_tmp("s1.cfg",
                      "entity = user\norder_key = ts\nlabel = fraud\nnumeric = amount\ncategorical = shop\n");
  auto schema = load_schema(sp);
  auto cp = write_tmp("d1.csv",
                      "user,ts,amount,shop,fraud\n"
                      "alice,30,5.0,grocer,0\n"
                      "alice,10,1.0,grocer,0\n"
                      "alice,20,3.0,cafe,1\n");
  NormStats stats;
  auto ds = load_csv(cp, schema, &stats);
  REQUIRE(ds.records.size() == 1);
  REQUIRE(ds.records[0].steps.size() == 3);
  CHECK(ds.records[0].label == 1.0);  // any-mode
  CHECK(ds.records[0].steps[0].order_key == 10);
  CHECK(ds.records[0].steps[1].order_key == 20);
  CHECK(ds.records[0].steps[2].order_key == 30);
  // z-normalized amounts: mean 3, std sqrt(8/3)
  double std3 = std::sqrt((4.0 + 0.0 + 4.0) / 3.0);
  CHECK(ds.records[0].steps[0].features[0] == doctest::Approx((1.0 - 3.0) / std3));
  // categorical indices from train vocab (1-based, 0 = UNK)
  CHECK(ds.records[0].steps[0].features[1] == 1);  // grocer
  CHECK(ds.records[0].steps[1].features[1] == 2);  // cafe
  std::remove(cp.c_str());

  // unseen categorical at test time maps to UNK = 0
  auto tp = write_tmp("d2.csv",
                      "user,ts,amount,shop,fraud\n"
                      "bob,1,3.0,bakery,0\n"
                      "bob,2,3.0,grocer,0\n");
  auto test_ds = load_csv(tp, schema, &stats);
  CHECK(test_ds.records[0].steps[0].features[1] == 0);
  CHECK(test_ds.records[0].steps[1].features[1] == 1);
  std::remove(tp.c_str());
  std::remove(sp.c_str());
}

TEST_CASE("csv errors carry context") {
  auto sp = write_tmp("s2.cfg", "entity = u\norder_key = t\nlabel = y\nnumeric = v\n");
  auto schema = load_schema(sp);
  auto missing = write_tmp("m.csv", "u,t,y\na,1,0\n");
  CHECK_THROWS_WITH_AS(load_csv(missing, schema), doctest::Contains("missing column 'v'"), DataError);
  std::remove(missing.c_str());
  auto badrow = write_tmp("b.csv", "u,t,v,y\na,1,1.0,0\na,2\n");
  CHECK_THROWS_WITH_AS(load_csv(badrow, schema), doctest::Contains("line 3"), DataError);
  std::remove(badrow.c_str());
  std::remove(sp.c_str());
}

TEST_CASE("z-normalized train columns have mean 0 std 1") {
  auto sp = write_tmp("s3.cfg", "entity = u\norder_key = t\nlabel = y\nnumeric = v\n");
  auto schema = load_schema(sp);
  std::string csv = "u,t,v,y\n";
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-40, 90);
  for (int i = 0; i < 500; ++i)
    csv += "e" + std::to_string(i % 7) + "," + std::to_string(i) + "," + std::to_string(d(rng)) + ",0\n";
  auto cp = write_tmp("s3.csv", csv);
  auto ds = load_csv(cp, schema);
  double mean = 0;
  int64_t n = 0;
  for (auto& r : ds.records)
    for (auto& s : r.steps) {
      mean += s.features[0];
      n++;
    }
  mean /= static_cast<double>(n);
  double var = 0;
  for (auto& r : ds.records)
    for (auto& s : r.steps) var += (s.features[0] - mean) * (s.features[0] - mean);
  var /= static_cast<double>(n);
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
  std::remove(cp.c_str());
  std::remove(sp.c_str());
}

TEST_CASE("synthetic classification: determinism, balance, learnability") {
  auto a = synth_classification(1000, 3, 42);
  auto b = synth_classification(1000, 3, 42);
  CHECK(a.records[17].steps[3].features == b.records[17].steps[3].features);
  CHECK(a.records[17].label == b.records[17].label);

  int64_t pos = 0;
  for (auto& r : a.records) pos += static_cast<int64_t>(r.label);
  double frac = static_cast<double>(pos) / 1000.0;
  CHECK(frac == doctest::Approx(0.30).epsilon(0.02 / 0.30));

  CHECK(oracle_detector_accuracy(a) >= 0.95);

  auto c = synth_classification(1000, 3, 43);
  CHECK(a.records[17].steps[3].features != c.records[17].steps[3].features);
}

TEST_CASE("synthetic regression: floor metadata and noiseless identifiability") {
  auto ds = synth_regression(200, 7, 1.5);
  CHECK(ds.noise_floor_rmse == doctest::Approx(1.5));
  CHECK(ds.task == nn::Task::kRegression);

  // zero noise: least squares on (t, sin, cos, 1) recovers the target exactly
  auto noiseless = synth_regression(50, 8, 0.0);
  double sse = 0;
  for (auto& rec : noiseless.records) {
    int L = static_cast<int>(rec.steps.size());
    // fit y_t = a*t + c1*sin + c2*cos + b by normal equations on 4 params
    double X[4][4] = {};
    double Xy[4] = {};
    for (int t = 0; t < L; ++t) {
      double row[4] = {static_cast<double>(t), rec.steps[t].features[1], rec.steps[t].features[2], 1.0};
      double y = rec.steps[t].features[0];
      for (int i = 0; i < 4; ++i) {
        Xy[i] += row[i] * y;
        for (int j = 0; j < 4; ++j) X[i][j] += row[i] * row[j];
      }
    }
    // gaussian elimination
    double M[4][5];
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) M[i][j] = X[i][j];
      M[i][4] = Xy[i];
    }
    for (int i = 0; i < 4; ++i) {
      int piv = i;
      for (int r = i + 1; r < 4; ++r)
        if (std::abs(M[r][i]) > std::abs(M[piv][i])) piv = r;
      std::swap(M[i], M[piv]);
      for (int r = 0; r < 4; ++r) {
        if (r == i) continue;
        double f = M[r][i] / M[i][i];
        for (int cidx = i; cidx < 5; ++cidx) M[r][cidx] -= f * M[i][cidx];
      }
    }
    double coef[4];
    for (int i = 0; i < 4; ++i) coef[i] = M[i][4] / M[i][i];
    int tl = L;  // label is the step after the last input
    double pred = coef[0] * tl + coef[1] * std::sin(2 * M_PI * tl / 7.0) +
                  coef[2] * std::cos(2 * M_PI * tl / 7.0) + coef[3];
    sse += (pred - rec.label) * (pred - rec.label);
  }
  CHECK(std::sqrt(sse / static_cast<double>(noiseless.records.size())) < 1e-6);
}

TEST_CASE("batch iterator: permutation property and padding lengths") {
  auto ds = synth_classification(97, 3, 5);
  BatchIter it(ds, ds.train_idx, 8, 11);
  Batch b;
  std::set<int64_t> seen;
  int batches = 0;
  while (it.next(b)) {
    ++batches;
    CHECK(b.record_idx.size() <= 8);
    int expect_max = 0;
    for (auto i : b.record_idx) {
      CHECK(!seen.count(i));
      seen.insert(i);
      expect_max = std::max(expect_max, static_cast<int>(ds.records[i].steps.size()));
    }
    CHECK(b.max_len == expect_max);
  }
  CHECK(seen.size() == ds.train_idx.size());
  CHECK(batches == (static_cast<int>(ds.train_idx.size()) + 7) / 8);

  // batch_size 1 yields record-at-a-time
  BatchIter one(ds, ds.train_idx, 1, 11);
  int count = 0;
  while (one.next(b)) {
    CHECK(b.record_idx.size() == 1);
    ++count;
  }
  CHECK(count == static_cast<int>(ds.train_idx.size()));
}

TEST_CASE("client assignment: coverage and fractions") {
  std::mt19937_64 rng(3);
  CHECK_THROWS_AS(assign_clients(10, 1, rng), DataError);
  CHECK_THROWS_AS(assign_clients(2, 3, rng), DataError);

  std::vector<int64_t> owned(3, 0);
  int64_t total = 0;
  for (int rep = 0; rep < 10000; ++rep) {
    auto owner = assign_clients(30, 3, rng);
    std::set<int> clients(owner.begin(), owner.end());
    CHECK(clients.size() == 3);
    for (int o : owner) owned[o]++;
    total += 30;
  }
  for (int c = 0; c < 3; ++c) {
    double frac = static_cast<double>(owned[c]) / static_cast<double>(total);
    CHECK(std::abs(frac - 1.0 / 3.0) < 0.02);
  }
}
