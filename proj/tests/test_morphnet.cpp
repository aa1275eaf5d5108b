#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "morph/geometry.hpp"
#include "morph/morphnet.hpp"
#include "morph/rng.hpp"

using namespace morph;
using namespace morph::morphnet;

namespace {

template <class T>
Cloud<T> random_cloud(Rng& rng, int n) {
  Cloud<T> c(n, 3);
  for (auto& v : c.v) v = static_cast<T>(rng.uniform() * 2.0 - 1.0);
  return c;
}

double min_pairwise_angle(const Mat<double>& pts) {
  double maxdot = -2.0;
  for (int i = 0; i < pts.rows; ++i)
    for (int j = i + 1; j < pts.rows; ++j) {
      double d = 0;
      for (int k = 0; k < 3; ++k) d += pts.at(i, k) * pts.at(j, k);
      maxdot = std::max(maxdot, d);
    }
  return std::acos(std::clamp(maxdot, -1.0, 1.0));
}

}  // namespace

TEST_CASE("sphere grid points are unit norm") {
  for (int n : {1, 7, 64, 256}) {
    const auto g = sphere_grid<double>(n, 42);
    REQUIRE(g.rows == n);
    for (int i = 0; i < n; ++i) {
      const double norm = std::sqrt(g.at(i, 0) * g.at(i, 0) + g.at(i, 1) * g.at(i, 1) +
                                    g.at(i, 2) * g.at(i, 2));
      CHECK(std::fabs(norm - 1.0) < 1e-6);
    }
  }
  const auto gf = sphere_grid<float>(128, 9);
  for (int i = 0; i < gf.rows; ++i) {
    const float norm = std::sqrt(gf.at(i, 0) * gf.at(i, 0) + gf.at(i, 1) * gf.at(i, 1) +
                                 gf.at(i, 2) * gf.at(i, 2));
    CHECK(std::fabs(norm - 1.0f) < 1e-5f);
  }
}

TEST_CASE("sphere grid is deterministic in the seed") {
  const auto a = sphere_grid<float>(64, 5);
  const auto b = sphere_grid<float>(64, 5);
  const auto c = sphere_grid<float>(64, 6);
  CHECK(a.v == b.v);
  bool differs = false;
  for (size_t i = 0; i < a.v.size(); ++i) differs |= a.v[i] != c.v[i];
  CHECK(differs);
}

TEST_CASE("sphere grid spreads better than iid uniform sampling") {
  // Monte-Carlo oracle: the spiral's minimum pairwise angle should beat the
  // average minimum angle of iid uniform sphere samples of the same size.
  const int n = 256;
  const auto g = sphere_grid<double>(n, 3);
  const double spiral_min = min_pairwise_angle(g);

  Rng rng(1234);
  double acc = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    Mat<double> pts(n, 3);
    for (int i = 0; i < n; ++i) {
      double v[3], norm = 0;
      do {
        norm = 0;
        for (double& x : v) {
          x = rng.gaussian();
          norm += x * x;
        }
      } while (norm < 1e-12);
      norm = std::sqrt(norm);
      for (int k = 0; k < 3; ++k) pts.at(i, k) = v[k] / norm;
    }
    acc += min_pairwise_angle(pts);
  }
  CHECK(spiral_min > acc / trials);
}

TEST_CASE("one hot basics") {
  const auto h0 = one_hot<float>(0, 3);
  CHECK(h0 == std::vector<float>{1.f, 0.f, 0.f});
  const auto hl = one_hot<float>(4, 5);
  CHECK(hl[4] == 1.f);
  std::vector<float> sum(4, 0.f);
  for (int t = 0; t < 4; ++t) {
    const auto h = one_hot<float>(t, 4);
    for (int j = 0; j < 4; ++j) sum[j] += h[j];
  }
  CHECK(sum == std::vector<float>(4, 1.f));
  CHECK_THROWS_AS(one_hot<float>(3, 3), InvalidInputError);
  CHECK_THROWS_AS(one_hot<float>(-1, 3), InvalidInputError);
}

TEST_CASE("morph block preserves shape and is deterministic") {
  Rng rng(11);
  for (int n : {4, 16, 33}) {
    MorphNet<float> net;
    net.init(rng, 5, n, 1, "mean", false, 77);
    Rng drng = Rng::derive(50, n);
    const auto x = random_cloud<float>(drng, n);
    MorphNetWork<float> w1, w2;
    const auto& y1 = morphnet_forward(net, x, 2, w1);
    const auto& y2 = morphnet_forward(net, x, 2, w2);
    REQUIRE(y1.rows == n);
    REQUIRE(y1.cols == 3);
    CHECK(all_finite(y1.data(), y1.size()));
    CHECK(y1.v == y2.v);
  }
}

TEST_CASE("conditioning class changes the output") {
  Rng rng(12);
  MorphNet<float> net;
  net.init(rng, 4, 24, 1, "mean", false, 3);
  Rng drng(60);
  const auto x = random_cloud<float>(drng, 24);
  MorphNetWork<float> wa, wb;
  const auto& ya = morphnet_forward(net, x, 0, wa);
  const auto& yb = morphnet_forward(net, x, 3, wb);
  float maxdiff = 0;
  for (size_t i = 0; i < ya.v.size(); ++i)
    maxdiff = std::max(maxdiff, std::fabs(ya.v[i] - yb.v[i]));
  CHECK(maxdiff > 0);
}

TEST_CASE("stacking returns all intermediates and combines by rule") {
  Rng rng(13);
  Rng drng(61);
  const auto x = random_cloud<float>(drng, 16);

  SUBCASE("single block final equals its only intermediate") {
    MorphNet<float> net;
    net.init(rng, 3, 16, 1, "mean", false, 1);
    MorphNetWork<float> w;
    const auto& y = morphnet_forward(net, x, 1, w);
    CHECK(y.v == w.intermediate(0).v);
  }

  SUBCASE("three blocks give three intermediates") {
    MorphNet<float> net;
    net.init(rng, 3, 16, 3, "mean", false, 1);
    MorphNetWork<float> w;
    morphnet_forward(net, x, 0, w);
    REQUIRE(static_cast<int>(w.blocks.size()) == 3);
    for (int k = 0; k < 3; ++k) {
      CHECK(w.intermediate(k).rows == 16);
      CHECK(w.intermediate(k).cols == 3);
    }
  }

  SUBCASE("mean mode feeds the midpoint of previous output and input") {
    MorphNet<float> net;
    net.init(rng, 3, 16, 2, "mean", false, 1);
    MorphNetWork<float> w;
    morphnet_forward(net, x, 1, w);
    for (size_t i = 0; i < x.v.size(); ++i)
      CHECK(w.blocks[1].xin.v[i] ==
            doctest::Approx(0.5f * (w.intermediate(0).v[i] + x.v[i])));
  }

  SUBCASE("sum mode feeds the sum") {
    MorphNet<float> net;
    net.init(rng, 3, 16, 2, "sum", false, 1);
    MorphNetWork<float> w;
    morphnet_forward(net, x, 1, w);
    for (size_t i = 0; i < x.v.size(); ++i)
      CHECK(w.blocks[1].xin.v[i] == doctest::Approx(w.intermediate(0).v[i] + x.v[i]));
  }
}

TEST_CASE("no-residual ablation runs and differs from the full block") {
  Rng rng1(14), rng2(14);
  MorphNet<float> full, ablated;
  full.init(rng1, 3, 12, 1, "mean", false, 2);
  ablated.init(rng2, 3, 12, 1, "mean", true, 2);
  CHECK(full.blocks[0].t2a.fin() == 128);
  CHECK(ablated.blocks[0].t2a.fin() == 64);
  Rng drng(62);
  const auto x = random_cloud<float>(drng, 12);
  MorphNetWork<float> wf, wa;
  const auto& yf = morphnet_forward(full, x, 0, wf);
  const auto& ya = morphnet_forward(ablated, x, 0, wa);
  REQUIRE(ya.rows == 12);
  bool differs = false;
  for (size_t i = 0; i < yf.v.size(); ++i) differs |= yf.v[i] != ya.v[i];
  CHECK(differs);
}

TEST_CASE("shape and range violations throw") {
  Rng rng(15);
  MorphNet<float> net;
  net.init(rng, 3, 8, 1, "mean", false, 2);
  Rng drng(63);
  MorphNetWork<float> w;
  const auto wrong = random_cloud<float>(drng, 9);
  CHECK_THROWS_AS(morphnet_forward(net, wrong, 0, w), InvalidInputError);
  const auto x = random_cloud<float>(drng, 8);
  CHECK_THROWS_AS(morphnet_forward(net, x, 3, w), InvalidInputError);
  CHECK_THROWS_AS(morphnet_forward(net, x, -1, w), InvalidInputError);
  Rng rng2(16);
  MorphNet<float> bad;
  CHECK_THROWS_AS(bad.init(rng2, 3, 8, 0, "mean", false, 2), InvalidInputError);
  CHECK_THROWS_AS(bad.init(rng2, 3, 8, 1, "median", false, 2), InvalidInputError);
}

namespace {

// Loss under test: sum of chamfer distances from the benign cloud to every
// intermediate, the reconstruction objective shape. Exercises every block's
// parameters plus the stack chaining.
double stack_loss(MorphNet<double>& net, const Cloud<double>& x, int t,
                  MorphNetWork<double>& w) {
  morphnet_forward(net, x, t, w);
  double loss = 0;
  for (int k = 0; k < net.n_blocks(); ++k)
    loss += geo::chamfer_distance<double>(x, w.intermediate(k));
  return loss;
}

void stack_loss_grad(MorphNet<double>& net, const Cloud<double>& x, int t,
                     MorphNetWork<double>& w, Cloud<double>* dx) {
  morphnet_forward(net, x, t, w);
  std::vector<Cloud<double>> dinter(net.n_blocks());
  for (int k = 0; k < net.n_blocks(); ++k) {
    dinter[k].resize(x.rows, 3);
    // dx collects the direct reference-argument term here; the network path
    // is added by morphnet_backward below.
    geo::chamfer_distance<double>(x, w.intermediate(k), dx, &dinter[k]);
  }
  morphnet_backward(net, w, dinter, dx);
}

void check_fd(MorphNet<double>& net, const Cloud<double>& x, int t, int per_slot) {
  MorphNetWork<double> w;
  nn::ParamList<double> params;
  net.params(params);
  net.zero_grad();
  Cloud<double> dx(x.rows, 3);
  stack_loss_grad(net, x, t, w, &dx);

  const double h = 1e-5;
  Rng pick(991);
  int checked = 0;
  for (auto& slot : params) {
    for (int r = 0; r < per_slot; ++r) {
      const size_t i = pick.uniform_index(slot.n);
      const double save = slot.p[i];
      slot.p[i] = save + h;
      const double up = stack_loss(net, x, t, w);
      slot.p[i] = save - h;
      const double dn = stack_loss(net, x, t, w);
      slot.p[i] = save;
      const double fd = (up - dn) / (2 * h);
      CHECK(std::fabs(fd - slot.g[i]) <= 1e-3 * (1.0 + std::fabs(fd)));
      ++checked;
    }
  }
  CHECK(checked == static_cast<int>(params.size()) * per_slot);

  // input-coordinate gradient
  Cloud<double> xm = x;
  Rng cpick(992);
  for (int r = 0; r < 12; ++r) {
    const int i = (int)cpick.uniform_index((size_t)x.rows);
    const int j = (int)cpick.uniform_index(3);
    const double save = xm.at(i, j);
    xm.at(i, j) = save + h;
    const double up = stack_loss(net, xm, t, w);
    xm.at(i, j) = save - h;
    const double dn = stack_loss(net, xm, t, w);
    xm.at(i, j) = save;
    const double fd = (up - dn) / (2 * h);
    CHECK(std::fabs(fd - dx.at(i, j)) <= 1e-3 * (1.0 + std::fabs(fd)));
  }
}

}  // namespace

TEST_CASE("single block gradients match finite differences") {
  Rng rng(17);
  MorphNet<double> net;
  net.init(rng, 3, 10, 1, "mean", false, 4);
  Rng drng(64);
  const auto x = random_cloud<double>(drng, 10);
  check_fd(net, x, 1, 2);
}

TEST_CASE("stacked gradients match finite differences") {
  Rng rng(18);
  MorphNet<double> net;
  net.init(rng, 3, 10, 2, "mean", false, 4);
  Rng drng(65);
  const auto x = random_cloud<double>(drng, 10);
  check_fd(net, x, 2, 1);
}

TEST_CASE("sum residual and no-residual gradients match finite differences") {
  Rng rng(19);
  Rng drng(66);
  const auto x = random_cloud<double>(drng, 9);
  {
    MorphNet<double> net;
    net.init(rng, 3, 9, 2, "sum", false, 5);
    check_fd(net, x, 0, 1);
  }
  {
    MorphNet<double> net;
    net.init(rng, 3, 9, 1, "mean", true, 5);
    check_fd(net, x, 0, 1);
  }
}

TEST_CASE("morphnet checkpoints round trip") {
  Rng rng(20);
  MorphNetF net;
  net.init(rng, 4, 20, 2, "mean", false, 31);
  const std::string dir = "/tmp/morph_test_ckpt_morphnet";
  std::filesystem::remove_all(dir);
  save_morphnet(net, dir, 123, 7);
  auto back = load_morphnet(dir);
  CHECK(back.c == 4);
  CHECK(back.n_points == 20);
  CHECK(back.n_blocks() == 2);
  CHECK(back.residual_mode == "mean");
  CHECK(back.grid_seed == 31);
  CHECK(back.grid.v == net.grid.v);

  nn::ParamList<float> pa, pb;
  net.params(pa);
  back.params(pb);
  REQUIRE(pa.size() == pb.size());
  for (size_t s = 0; s < pa.size(); ++s) {
    CHECK(pa[s].name == pb[s].name);
    REQUIRE(pa[s].n == pb[s].n);
    for (size_t i = 0; i < pa[s].n; ++i) CHECK(pa[s].p[i] == pb[s].p[i]);
  }

  Rng drng(67);
  const auto x = random_cloud<float>(drng, 20);
  MorphNetWork<float> w1, w2;
  const auto& y1 = morphnet_forward(net, x, 3, w1);
  const auto& y2 = morphnet_forward(back, x, 3, w2);
  CHECK(y1.v == y2.v);

  CHECK_THROWS_AS(load_morphnet("/tmp/morph_test_missing_dir"), MissingArtifactError);
  std::filesystem::remove_all(dir);
}
