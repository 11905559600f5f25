#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mpma/losses.hpp"
#include "mpma/rng.hpp"
#include "mpma/tensor.hpp"
#include "oracles.hpp"

using namespace mpma;

namespace {

Array<double> random_array(Shape s, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.normal() * scale;
  return Array<double>(std::move(s), std::move(v));
}

std::vector<double> values_of(const Array<double>& a) {
  return std::vector<double>(a.data->begin(), a.data->end());
}

// Naive mean cross-entropy of targets under row softmax.
double oracle_mlm(const std::vector<double>& logits, const std::vector<std::size_t>& targets,
                  std::size_t rows, std::size_t cols) {
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> row(logits.begin() + i * cols, logits.begin() + (i + 1) * cols);
    const auto p = oracle::softmax(row);
    total += -std::log(p[targets[i]]);
  }
  return total / double(rows);
}

// Naive local aggregation score between one image's regions and one report's
// projected words; mirrors the column-softmax/aggregate/logsumexp pipeline
// with plain loops.
double oracle_H(const std::vector<double>& v, const std::vector<double>& t, std::size_t np,
                std::size_t m, std::size_t d, double tau2) {
  std::vector<double> scores(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> col(np);
    for (std::size_t i = 0; i < np; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += v[i * d + k] * t[j * d + k];
      col[i] = s / tau2;
    }
    const auto alpha = oracle::softmax(col);
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      double g = 0.0;
      for (std::size_t i = 0; i < np; ++i) g += alpha[i] * v[i * d + k];
      dot += g * t[j * d + k];
    }
    scores[j] = dot;
  }
  return oracle::logsumexp(scores);
}

}  // namespace

TEST_CASE("loss_mim equals the mean squared error oracle") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t r = 1 + rng.below(4), c = 1 + rng.below(5);
    auto a = random_array({r, c}, rng.next());
    auto b = random_array({r, c}, rng.next());
    auto l = loss_mim(constant(a), constant(b));
    CHECK(l.scalar() ==
          doctest::Approx(oracle::mse(values_of(a), values_of(b))).epsilon(1e-12));
  }
}

TEST_CASE("loss_mim rejects mismatched or empty inputs") {
  CHECK_THROWS_AS(loss_mim(zeros<double>({2, 3}), zeros<double>({3, 2})), std::invalid_argument);
  CHECK_THROWS_AS(loss_mim(zeros<double>({0, 3}), zeros<double>({0, 3})), std::invalid_argument);
}

TEST_CASE("loss_mlm on uniform logits is log vocabulary size") {
  const std::size_t V = 100;
  auto logits = zeros<double>({3, V});
  auto l = loss_mlm(logits, {4, 17, 99});
  CHECK(l.scalar() == doctest::Approx(std::log(double(V))).epsilon(1e-9));
}

TEST_CASE("loss_mlm matches a naive per-row cross-entropy") {
  SplitMix64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t rows = 1 + rng.below(4), cols = 2 + rng.below(6);
    auto logits = random_array({rows, cols}, rng.next());
    std::vector<std::size_t> targets(rows);
    for (auto& t : targets) t = rng.below(cols);
    auto l = loss_mlm(constant(logits), targets);
    CHECK(l.scalar() ==
          doctest::Approx(oracle_mlm(values_of(logits), targets, rows, cols)).epsilon(1e-10));
  }
}

TEST_CASE("loss_mlm rejects empty rows and target count mismatches") {
  CHECK_THROWS_AS(loss_mlm(zeros<double>({0, 5}), {}), std::invalid_argument);
  CHECK_THROWS_AS(loss_mlm(zeros<double>({2, 5}), {1}), std::invalid_argument);
}

TEST_CASE("loss_global closed form: two orthonormal aligned pairs at tau 1") {
  // Similarity matrix is the identity; each row/column softmax gives the
  // matched pair -log(e / (e + 1)) = log(1 + e^{-1}).
  auto g = constant<double>({2, 2}, {1, 0, 0, 1});
  auto l = loss_global(g, g, 1.0);
  CHECK(l.scalar() == doctest::Approx(2.0 * std::log(1.0 + std::exp(-1.0))).epsilon(1e-9));
}

TEST_CASE("loss_global matches the symmetric InfoNCE oracle") {
  SplitMix64 rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t N = 1 + rng.below(3), d = 2 + rng.below(4);
    const double tau = 0.3 + 0.5 * rng.real();
    auto img = random_array({N, d}, rng.next());
    auto txt = random_array({N, d}, rng.next());
    auto l = loss_global(constant(img), constant(txt), tau);
    const auto iv = values_of(img);
    const auto tv = values_of(txt);
    std::vector<double> sim(N * N, 0.0);  // img_i . txt_j
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t k = 0; k < d; ++k) sim[i * N + j] += iv[i * d + k] * tv[j * d + k];
    CHECK(l.scalar() == doctest::Approx(oracle::symmetric_info_nce(sim, N, tau)).epsilon(1e-9));
  }
}

TEST_CASE("loss_global is symmetric under swapping the modalities") {
  SplitMix64 rng(44);
  auto a = constant(random_array({3, 4}, rng.next()));
  auto b = constant(random_array({3, 4}, rng.next()));
  auto l_ab = loss_global(a, b, 0.7);
  auto l_ba = loss_global(b, a, 0.7);
  CHECK(l_ab.scalar() == doctest::Approx(l_ba.scalar()).epsilon(1e-12));
}

TEST_CASE("loss_global with a huge temperature approaches 2 log N") {
  auto a = constant(random_array({4, 3}, 451));
  auto b = constant(random_array({4, 3}, 452));
  auto l = loss_global(a, b, 1e9);
  CHECK(l.scalar() == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("loss_global error paths") {
  CHECK_THROWS_AS(loss_global(zeros<double>({2, 3}), zeros<double>({2, 3}), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss_global(zeros<double>({2, 3}), zeros<double>({2, 3}), -1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss_global(zeros<double>({2, 3}), zeros<double>({3, 3}), 1.0),
                  std::invalid_argument);
}

TEST_CASE("local_similarity_H matches the naive loop oracle") {
  SplitMix64 rng(55);
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t np = 1 + rng.below(4), m = 1 + rng.below(4), d = 2 + rng.below(4);
    const double tau2 = 0.3 + 0.6 * rng.real();
    auto v = random_array({np, d}, rng.next());
    auto t = random_array({m, d}, rng.next());
    auto h = local_similarity_H(constant(v), constant(t), tau2);
    CHECK(h.scalar() ==
          doctest::Approx(oracle_H(values_of(v), values_of(t), np, m, d, tau2)).epsilon(1e-10));
  }
}

TEST_CASE("local aggregation weights become uniform as tau2 grows") {
  // At huge tau2 the aggregate is the mean region vector, so H is
  // logsumexp of mean(v) . t_j, computable by hand.
  const std::size_t np = 3, m = 2, d = 2;
  auto v = random_array({np, d}, 551);
  auto t = random_array({m, d}, 552);
  auto h = local_similarity_H(constant(v), constant(t), 1e9);
  const auto vv = values_of(v);
  const auto tv = values_of(t);
  std::vector<double> scores(m);
  for (std::size_t j = 0; j < m; ++j) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < np; ++i) mean += vv[i * d + k];
      dot += mean / double(np) * tv[j * d + k];
    }
    scores[j] = dot;
  }
  CHECK(h.scalar() == doctest::Approx(oracle::logsumexp(scores)).epsilon(1e-6));
}

TEST_CASE("loss_local matches a naive cross-pair similarity matrix") {
  SplitMix64 rng(66);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t N = 1 + rng.below(3), d = 2 + rng.below(3);
    const double tau2 = 0.4 + 0.4 * rng.real(), tau3 = 0.3 + 0.5 * rng.real();
    std::vector<Tensor<double>> vs, ts;
    std::vector<std::vector<double>> vraw, traw;
    std::vector<std::size_t> nps, ms;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t np = 1 + rng.below(4), m = 1 + rng.below(4);
      auto v = random_array({np, d}, rng.next());
      auto t = random_array({m, d}, rng.next());
      vs.push_back(constant(v));
      ts.push_back(constant(t));
      vraw.push_back(values_of(v));
      traw.push_back(values_of(t));
      nps.push_back(np);
      ms.push_back(m);
    }
    auto l = loss_local(vs, ts, tau2, tau3);
    std::vector<double> H(N * N);
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t b = 0; b < N; ++b)
        H[a * N + b] = oracle_H(vraw[a], traw[b], nps[a], ms[b], d, tau2);
    CHECK(l.scalar() == doctest::Approx(oracle::symmetric_info_nce(H, N, tau3)).epsilon(1e-9));
  }
}

TEST_CASE("loss_local error paths") {
  std::vector<Tensor<double>> vs = {zeros<double>({2, 3})};
  std::vector<Tensor<double>> ts = {zeros<double>({2, 3})};
  CHECK_THROWS_AS(loss_local(vs, ts, 1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(loss_local({}, {}, 1.0, 1.0), std::invalid_argument);
  std::vector<Tensor<double>> ts2 = {zeros<double>({2, 3}), zeros<double>({2, 3})};
  CHECK_THROWS_AS(loss_local(vs, ts2, 1.0, 1.0), std::invalid_argument);
  std::vector<Tensor<double>> bad_t = {zeros<double>({2, 4})};
  CHECK_THROWS_AS(loss_local(vs, bad_t, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("warmup_lambda follows the Gaussian ramp and pins at one") {
  CHECK(warmup_lambda(0, 5) == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
  CHECK(warmup_lambda(2, 4) == doctest::Approx(std::exp(-1.25)).epsilon(1e-12));
  CHECK(warmup_lambda(5, 5) == 1.0);
  CHECK(warmup_lambda(9, 5) == 1.0);
  for (std::size_t t = 1; t <= 5; ++t) CHECK(warmup_lambda(t, 5) > warmup_lambda(t - 1, 5));
  CHECK_THROWS_AS(warmup_lambda(0, 0), std::invalid_argument);
}

TEST_CASE("loss_all combines the terms with schedule weights") {
  SplitMix64 rng(77);
  for (std::size_t epoch : {std::size_t(0), std::size_t(2), std::size_t(7)}) {
    TrainSchedule sched;
    sched.epoch = epoch;
    sched.warmup_epochs = 5;
    sched.lambda_il = 5.0;
    sched.lambda_gl = 3.0;
    const double a = rng.real(), b = rng.real(), c = rng.real(), e = rng.real();
    auto l = loss_all(constant<double>({}, {a}), constant<double>({}, {b}),
                      constant<double>({}, {c}), constant<double>({}, {e}), sched);
    const double gla = warmup_lambda(epoch, 5);
    CHECK(l.scalar() == doctest::Approx(a + 5.0 * b + gla * (c + 3.0 * e)).epsilon(1e-12));
  }
}

TEST_CASE("loss_all rejects non-finite components") {
  TrainSchedule sched;
  auto ok = constant<double>({}, {1.0});
  auto bad = constant<double>({}, {std::nan("")});
  auto inf = constant<double>({}, {std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(loss_all(bad, ok, ok, ok, sched), std::domain_error);
  CHECK_THROWS_AS(loss_all(ok, inf, ok, ok, sched), std::domain_error);
  CHECK_NOTHROW(loss_all(ok, ok, ok, ok, sched));
}

TEST_CASE("finite differences through every loss") {
  std::map<std::string, Array<double>> params;
  params["recon"] = random_array({3, 4}, 801);
  params["truth"] = random_array({3, 4}, 802);
  auto rep_mim = oracle::check_gradients(params, [](Tape<double>& tp, auto& p) {
    return loss_mim(tp.leaf("recon", p["recon"]), tp.leaf("truth", p["truth"]));
  });
  INFO(rep_mim.worst);
  CHECK(rep_mim.ok(1e-6));

  std::map<std::string, Array<double>> pm;
  pm["logits"] = random_array({3, 6}, 803);
  auto rep_mlm = oracle::check_gradients(pm, [](Tape<double>& tp, auto& p) {
    return loss_mlm(tp.leaf("logits", p["logits"]), {1, 4, 2});
  });
  INFO(rep_mlm.worst);
  CHECK(rep_mlm.ok(1e-6));

  std::map<std::string, Array<double>> pg;
  pg["img"] = random_array({3, 4}, 804);
  pg["txt"] = random_array({3, 4}, 805);
  auto rep_g = oracle::check_gradients(pg, [](Tape<double>& tp, auto& p) {
    return loss_global(tp.leaf("img", p["img"]), tp.leaf("txt", p["txt"]), 0.5);
  });
  INFO(rep_g.worst);
  CHECK(rep_g.ok(1e-6));

  std::map<std::string, Array<double>> pl;
  pl["v0"] = random_array({3, 3}, 806, 0.7);
  pl["t0"] = random_array({2, 3}, 807, 0.7);
  pl["v1"] = random_array({4, 3}, 808, 0.7);
  pl["t1"] = random_array({3, 3}, 809, 0.7);
  auto rep_l = oracle::check_gradients(pl, [](Tape<double>& tp, auto& p) {
    std::vector<Tensor<double>> vs = {tp.leaf("v0", p["v0"]), tp.leaf("v1", p["v1"])};
    std::vector<Tensor<double>> ts = {tp.leaf("t0", p["t0"]), tp.leaf("t1", p["t1"])};
    return loss_local(vs, ts, 0.8, 0.5);
  });
  INFO(rep_l.worst);
  CHECK(rep_l.ok(5e-6));
}

TEST_CASE("loss_global is invariant to a consistent batch permutation") {
  auto img = random_array({4, 3}, 901);
  auto txt = random_array({4, 3}, 902);
  auto l0 = loss_global(constant(img), constant(txt), 0.6).scalar();
  // Swap rows 0 and 2 in both modalities.
  std::vector<double> iv = values_of(img), tv = values_of(txt);
  for (std::size_t k = 0; k < 3; ++k) {
    std::swap(iv[k], iv[2 * 3 + k]);
    std::swap(tv[k], tv[2 * 3 + k]);
  }
  auto l1 = loss_global(constant<double>({4, 3}, iv), constant<double>({4, 3}, tv), 0.6).scalar();
  CHECK(l0 == doctest::Approx(l1).epsilon(1e-12));
}

TEST_CASE("TrainSchedule applies the warmup to its alignment weight") {
  TrainSchedule s;
  s.warmup_epochs = 5;
  s.epoch = 0;
  CHECK(s.lambda_gla() == doctest::Approx(std::exp(-5.0)));
  s.epoch = 5;
  CHECK(s.lambda_gla() == 1.0);
}
