// Ranking, Recall@k, NDCG@k, cohorts and report formats.

#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "wavecf/eval.hpp"
#include "wavecf/ingest.hpp"

using namespace wavecf;

namespace {

RankedList list_of(std::vector<std::uint32_t> items) {
  RankedList l;
  l.items = std::move(items);
  return l;
}

struct TableScorer {
  const Matrix* s;
  void operator()(std::uint32_t u, std::span<double> out) const {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*s)(u, static_cast<Index>(i));
  }
};

struct Fixture {
  InteractionSet train, test;
  Matrix scores;
  Fixture(std::size_t m, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto d = oracle::random_bipartite(m, k, 0.25, rng);
    auto s = split(d, {0.6, seed, std::nullopt});
    train = s.train;
    test = s.test;
    scores = Matrix::Random(static_cast<Index>(m), static_cast<Index>(k));
  }
};

}  // namespace

TEST_CASE("equal scores rank by index", "[eval][topk]") {
  std::vector<double> s(10, 1.0);
  CHECK(topk(0, s, {}, 4).items == std::vector<std::uint32_t>{0, 1, 2, 3});
  s[7] = 5.0;
  CHECK(topk(0, s, {}, 3).items == std::vector<std::uint32_t>{7, 0, 1});
  std::vector<std::uint32_t> masked{7};
  auto l = topk(0, s, masked, 10);
  CHECK(l.items.size() == 9);
  CHECK(std::find(l.items.begin(), l.items.end(), 7u) == l.items.end());
  CHECK_THROWS_AS(topk(0, s, {}, 0), ConfigError);
}

TEST_CASE("worked recall and NDCG values", "[eval][metric]") {
  std::vector<std::uint32_t> test{1, 5, 6, 9};
  CHECK(recall_at_k(list_of({5, 2, 3}), test) == 0.25);
  CHECK(recall_at_k(list_of({0, 2, 3}), test) == 0.0);
  CHECK(recall_at_k(list_of({9, 6, 5, 1}), test) == 1.0);

  std::vector<std::uint32_t> two{4, 8};
  const double v = ndcg_at_k(list_of({4, 0, 8}), two, 3);
  CHECK(v == Catch::Approx(1.5 / (1.0 + 1.0 / std::log2(3.0))).epsilon(1e-15));
  CHECK(std::abs(v - 0.9197) < 5e-5);
  CHECK(ndcg_at_k(list_of({8, 4, 0}), two, 3) == 1.0);
  CHECK(ndcg_at_k(list_of({0, 1, 2}), two, 3) == 0.0);
  CHECK_THROWS_AS(recall_at_k(list_of({1}), {}), DataError);
  CHECK_THROWS_AS(ndcg_at_k(list_of({1}), {}), DataError);
}

TEST_CASE("metrics agree with a full-sort reference", "[eval][metric]") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(5, 60), coarse(0, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = static_cast<std::size_t>(size(rng));
    std::vector<double> scores(n);
    for (auto& x : scores) x = coarse(rng);  // coarse values force ties
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t nm = std::uniform_int_distribution<std::size_t>(0, n / 3)(rng);
    const std::size_t nt = std::uniform_int_distribution<std::size_t>(1, n - nm)(rng);
    std::vector<std::uint32_t> masked(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nm));
    std::vector<std::uint32_t> test(idx.begin() + static_cast<std::ptrdiff_t>(nm),
                                    idx.begin() + static_cast<std::ptrdiff_t>(nm + nt));
    std::sort(masked.begin(), masked.end());
    std::sort(test.begin(), test.end());
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    auto want = oracle::brute_metrics(scores, masked, test, k);
    auto l = topk(0, scores, masked, k);
    CHECK(std::abs(recall_at_k(l, test, k) - want.recall) <= 1e-12);
    CHECK(std::abs(ndcg_at_k(l, test, k) - want.ndcg) <= 1e-12);
  }
}

TEST_CASE("metrics are bounded and non-decreasing in k", "[eval][metric]") {
  Fixture f(40, 30, 3);
  auto rep = evaluate(TableScorer{&f.scores}, f.train, f.test, {1, 5, 10, 20, 30});
  for (std::size_t a = 0; a < rep.by_k.size(); ++a) {
    for (std::size_t u = 0; u < rep.users.size(); ++u) {
      CHECK(rep.by_k[a].user_recall[u] >= 0);
      CHECK(rep.by_k[a].user_recall[u] <= 1);
      CHECK(rep.by_k[a].user_ndcg[u] >= 0);
      CHECK(rep.by_k[a].user_ndcg[u] <= 1 + 1e-15);
      if (a > 0) CHECK(rep.by_k[a].user_recall[u] >= rep.by_k[a - 1].user_recall[u]);
    }
  }
  for (double r : rep.at(30).user_recall) CHECK(r == 1.0);
}

TEST_CASE("reordering below the last hit leaves NDCG unchanged", "[eval][metric]") {
  std::vector<std::uint32_t> test{2, 7};
  auto a = list_of({2, 9, 7, 1, 3, 4});
  auto b = list_of({2, 9, 7, 4, 1, 3});
  CHECK(ndcg_at_k(a, test, 6) == ndcg_at_k(b, test, 6));
}

TEST_CASE("cohorts partition the evaluated users", "[eval][cohort]") {
  Fixture f(80, 60, 4);
  CohortSpec c{{5, 9, 12}};
  auto rep = evaluate(TableScorer{&f.scores}, f.train, f.test, {10}, c);
  std::size_t total = 0;
  double weighted = 0;
  for (const auto& g : rep.at(10).cohorts) {
    total += g.users;
    weighted += g.recall * static_cast<double>(g.users);
  }
  CHECK(total == rep.users.size());
  CHECK(weighted / static_cast<double>(total) == Catch::Approx(rep.at(10).recall).epsilon(1e-12));
  CHECK(c.label(0) == "[0,5)");
  CHECK(c.label(3) == "[12,inf)");
  CHECK(c.group_of(5) == 1);
  CHECK(c.group_of(4) == 0);
}

TEST_CASE("users with an empty test set are excluded", "[eval]") {
  auto d = make_interaction_set({{0, 0}, {0, 1}, {1, 0}}, {"a", "b"}, {"x", "y", "z"});
  auto train = with_pairs(d, {{0, 0}, {1, 0}}, 0);
  auto test = with_pairs(d, {{0, 1}}, 0);
  Matrix s = Matrix::Zero(2, 3);
  auto rep = evaluate(TableScorer{&s}, train, test, {1});
  CHECK(rep.users == std::vector<std::uint32_t>{0});
  CHECK(rep.at(1).recall == 1.0);  // item 0 masked, item 1 wins the tie
  auto none = with_pairs(d, {}, 0);
  CHECK_THROWS_AS(evaluate(TableScorer{&s}, train, none, {1}), DataError);
  CHECK_THROWS_AS(evaluate(TableScorer{&s}, train, test, {}), ConfigError);
  CHECK_THROWS_AS(rep.at(7), ConfigError);
}

TEST_CASE("uniform random scores match the analytic recall", "[eval]") {
  std::mt19937_64 rng(21);
  auto d = oracle::random_bipartite(300, 200, 0.1, rng);
  auto s = split(d, {0.8, 21, std::nullopt});
  Matrix scores = Matrix::Random(300, 200);
  auto rep = evaluate(TableScorer{&scores}, s.train, s.test, {20});
  auto seen = s.train.items_by_user();
  double mean = 0, var = 0;
  for (auto u : rep.users) {
    const double p = std::min(1.0, 20.0 / static_cast<double>(200 - seen[u].size()));
    mean += p;
    const double n_t = static_cast<double>(s.test.items_by_user()[u].size());
    const double pool = static_cast<double>(200 - seen[u].size());
    // hypergeometric variance of hits / n_t
    const double draws = std::min(20.0, pool);
    var += draws * (n_t / pool) * (1 - n_t / pool) * (pool - draws) / std::max(1.0, pool - 1) /
           (n_t * n_t);
  }
  const double n = static_cast<double>(rep.users.size());
  mean /= n;
  const double se = std::sqrt(var) / n;
  CHECK(std::abs(rep.at(20).recall - mean) <= 3 * se);
}

TEST_CASE("evaluation is pure and thread-count invariant", "[eval]") {
  Fixture f(120, 50, 6);
  auto a = evaluate(TableScorer{&f.scores}, f.train, f.test, {5, 20}, {}, 1);
  auto b = evaluate(TableScorer{&f.scores}, f.train, f.test, {5, 20}, {}, 1);
  auto c = evaluate(TableScorer{&f.scores}, f.train, f.test, {20, 5}, {}, 4);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(a.by_k[k].recall == b.by_k[k].recall);
    CHECK(a.by_k[k].ndcg == b.by_k[k].ndcg);
    CHECK(a.by_k[k].recall == c.by_k[k].recall);
    CHECK(a.by_k[k].ndcg == c.by_k[k].ndcg);
    CHECK(a.by_k[k].user_ndcg == c.by_k[k].user_ndcg);
  }
}

TEST_CASE("report formats", "[eval][report]") {
  auto d = make_interaction_set({{0, 0}, {0, 1}, {1, 0}, {1, 2}}, {"a", "b"}, {"x", "y", "z"});
  auto train = with_pairs(d, {{0, 0}, {1, 0}}, 0);
  auto test = with_pairs(d, {{0, 1}, {1, 2}}, 0);
  Matrix s(2, 3);
  s << 0, 1, 0, 0, 1, 0;
  auto rep = evaluate(TableScorer{&s}, train, test, {1}, CohortSpec{{25}});

  std::ostringstream lines, csv, table;
  write_report_lines(lines, rep);
  write_report_csv(csv, rep);
  write_report_table(table, rep);
  CHECK(lines.str() ==
        "recall 1 all 0.5 2\nndcg 1 all 0.5 2\n"
        "recall 1 [0,25) 0.5 2\nndcg 1 [0,25) 0.5 2\n"
        "recall 1 [25,inf) 0 0\nndcg 1 [25,inf) 0 0\n");
  CHECK(csv.str() == "k,recall,ndcg,users\n1,0.5,0.5,2\n");
  const std::string tab = table.str();
  CHECK(tab.find("0.5000") != std::string::npos);
  CHECK(std::count(tab.begin(), tab.end(), '\n') == 4);

  std::vector<ColdStartRow> rows{{3, 0.1, 0.05, 30}};
  std::ostringstream cs;
  write_cold_start_table(cs, rows);
  const std::string cold = cs.str();
  CHECK(cold.find("recall@20") != std::string::npos);
  CHECK(std::count(cold.begin(), cold.end(), '\n') == 2);
}

TEST_CASE("cold-start suite shares the test side and reports each cap", "[eval][cold]") {
  std::mt19937_64 rng(9);
  auto d = oracle::random_bipartite(50, 40, 0.3, rng);
  std::vector<std::size_t> caps{3, 5, 1000};
  std::vector<std::vector<Interaction>> tests;
  std::vector<std::size_t> max_train;
  auto rows = cold_start_suite(d, caps, {0.8, 9, std::nullopt}, [&](const Split& s) {
    tests.push_back(s.test.pairs);
    std::size_t mx = 0;
    for (const auto& v : s.train.items_by_user()) mx = std::max(mx, v.size());
    max_train.push_back(mx);
    Matrix sc = Matrix::Zero(50, 40);
    return evaluate(TableScorer{&sc}, s.train, s.test, {20});
  });
  REQUIRE(rows.size() == 3);
  CHECK(tests[0] == tests[1]);
  CHECK(tests[1] == tests[2]);
  CHECK(max_train[0] <= 3);
  CHECK(max_train[1] <= 5);
  CHECK(rows[0].train_pairs <= rows[1].train_pairs);
  CHECK(rows[2].train_pairs == split(d, {0.8, 9, std::nullopt}).train.nnz());
  std::vector<std::size_t> bad{0};
  CHECK_THROWS_AS(cold_start_suite(d, bad, {0.8, 9, std::nullopt},
                                   [](const Split&) { return MetricReport{}; }),
                  ConfigError);
}
