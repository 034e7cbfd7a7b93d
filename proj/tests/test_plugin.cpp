// The trainable plug-in: projector MLPs, gamma scaling, the three-slot
// prefix, gradient plumbing, and checkpoint persistence.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "psplug/plugin.hpp"
#include "psplug/toy_backbone.hpp"

#include "test_util.hpp"

using namespace psplug;

namespace {

std::shared_ptr<ToyBackbone> tiny_backbone() {
  ToyBackbone::Config cfg;
  cfg.hidden = 16;
  cfg.max_seq = 96;
  return make_toy_backbone(cfg);
}

double oracle_gelu(double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("two-layer mlp forward matches a scalar hand computation") {
  TwoLayerMlp mlp(2, 2, 2, 5);
  mlp.w1 << 1.0, 0.0, 0.0, 1.0;
  mlp.b1 << 0.5, -0.5;
  mlp.w2 << 1.0, 2.0, 3.0, 4.0;
  mlp.b2 << 0.1, 0.2;
  Vector x(2);
  x << 1.0, 2.0;

  const double h1 = oracle_gelu(1.0 * 1.0 + 0.0 * 2.0 + 0.5);
  const double h2 = oracle_gelu(0.0 * 1.0 + 1.0 * 2.0 - 0.5);
  const double y1 = 1.0 * h1 + 3.0 * h2 + 0.1;
  const double y2 = 2.0 * h1 + 4.0 * h2 + 0.2;

  const Vector y = mlp.forward(x);
  REQUIRE(y.size() == 2);
  CHECK(y(0) == Catch::Approx(y1).epsilon(1e-14));
  CHECK(y(1) == Catch::Approx(y2).epsilon(1e-14));

  Vector bad(3);
  bad.setZero();
  CHECK_THROWS_AS(mlp.forward(bad), InvalidInputError);
}

TEST_CASE("a freshly seeded mlp is the constant-zero map") {
  TwoLayerMlp mlp(6, 8, 4, 42);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  Vector x(6);
  for (int i = 0; i < 6; ++i) x(i) = gauss(rng);
  CHECK(mlp.forward(x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(mlp.w2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(mlp.b2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(mlp.w1.cwiseAbs().maxCoeff() > 0.0);  // the input layer is not degenerate
}

TEST_CASE("mlp backward matches central differences on all tensors") {
  TwoLayerMlp mlp(3, 4, 2, 7);
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss(0.0, 0.7);
  for (Eigen::Index j = 0; j < mlp.w2.cols(); ++j)
    for (Eigen::Index i = 0; i < mlp.w2.rows(); ++i) mlp.w2(i, j) = gauss(rng);
  for (Eigen::Index j = 0; j < mlp.b2.cols(); ++j) mlp.b2(0, j) = gauss(rng);

  Vector x(3), dy(2);
  for (int i = 0; i < 3; ++i) x(i) = gauss(rng);
  for (int i = 0; i < 2; ++i) dy(i) = gauss(rng);

  auto loss = [&]() { return double(dy.transpose() * mlp.forward(x)); };

  mlp.zero_grad();
  TwoLayerMlp::Cache cache;
  mlp.forward(x, cache);
  const Vector dx = mlp.backward(cache, dy);

  const double step = 1e-6;
  auto check_tensor = [&](Matrix& w, const Matrix& g) {
    for (Eigen::Index idx = 0; idx < w.size(); ++idx) {
      const double saved = w.data()[idx];
      w.data()[idx] = saved + step;
      const double up = loss();
      w.data()[idx] = saved - step;
      const double down = loss();
      w.data()[idx] = saved;
      const double numeric = (up - down) / (2.0 * step);
      CHECK(g.data()[idx] == Catch::Approx(numeric).margin(1e-7));
    }
  };
  check_tensor(mlp.w1, mlp.gw1);
  check_tensor(mlp.b1, mlp.gb1);
  check_tensor(mlp.w2, mlp.gw2);
  check_tensor(mlp.b2, mlp.gb2);

  for (int i = 0; i < 3; ++i) {
    Vector xp = x, xm = x;
    xp(i) += step;
    xm(i) -= step;
    const double numeric =
        (double(dy.transpose() * mlp.forward(xp)) - double(dy.transpose() * mlp.forward(xm))) /
        (2.0 * step);
    CHECK(dx(i) == Catch::Approx(numeric).margin(1e-7));
  }
}

TEST_CASE("gradients accumulate across backward calls until zero_grad") {
  TwoLayerMlp mlp(2, 3, 2, 9);
  Vector x(2), dy(2);
  x << 0.3, -0.4;
  dy << 1.0, 2.0;
  TwoLayerMlp::Cache cache;
  mlp.forward(x, cache);
  mlp.backward(cache, dy);
  const Matrix once = mlp.gw1;
  mlp.backward(cache, dy);
  CHECK((mlp.gw1 - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
  mlp.zero_grad();
  CHECK(mlp.gw1.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("compute_gamma is the mean embedding-row norm") {
  auto bb = tiny_backbone();
  std::vector<int> all_ids(size_t(bb->vocab_size()));
  for (size_t i = 0; i < all_ids.size(); ++i) all_ids[i] = int(i);
  const Matrix table = bb->embed_tokens(all_ids);
  double expect = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    double ss = 0.0;
    for (Eigen::Index j = 0; j < table.cols(); ++j) ss += table(i, j) * table(i, j);
    expect += std::sqrt(ss);
  }
  expect /= double(bb->vocab_size());
  CHECK(compute_gamma(*bb) == Catch::Approx(expect).epsilon(1e-13));
  CHECK(compute_gamma(*bb) > 0.0);
}

TEST_CASE("compose_prefix scales only the user slot") {
  Vector zs(3), zu(3), zx(3);
  zs << 1.0, 2.0, 3.0;
  zu << 4.0, 5.0, 6.0;
  zx << 7.0, 8.0, 9.0;
  const Matrix m = compose_prefix(zs, zu, zx, 0.25);
  REQUIRE(m.rows() == 3);
  REQUIRE(m.cols() == 3);
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 0) == 1.0);   // 0.25 * 4
  CHECK(m(1, 2) == 1.5);   // 0.25 * 6
  CHECK(m(2, 2) == 9.0);

  const Matrix off = compose_prefix(zs, zu, zx, 0.0);
  CHECK(off.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((off.row(0) - m.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((off.row(2) - m.row(2)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(compose_prefix(zs, zu, zx, -0.1), InvalidInputError);
  Vector wide(4);
  wide.setZero();
  CHECK_THROWS_AS(compose_prefix(zs, wide, zx, 1.0), InvalidInputError);
}

TEST_CASE("freshly initialized parameters compose the exact zero prefix") {
  auto bb = tiny_backbone();
  PluginParams p = PluginParams::init(12, bb->hidden_dim(), compute_gamma(*bb), 31);
  Vector e_u = Vector::Ones(12) / std::sqrt(12.0);
  const auto x = bb->tokenize("sample input");
  PrefixBuild b = build_prefix(p, *bb, e_u, x, 1.0);
  REQUIRE(b.prefix.rows() == 3);
  REQUIRE(b.prefix.cols() == bb->hidden_dim());
  CHECK(b.prefix.cwiseAbs().maxCoeff() == 0.0);

  // Opting into a nonzero system embedding moves only the system slot.
  PluginParams q = PluginParams::init(12, bb->hidden_dim(), compute_gamma(*bb), 31, 0.05);
  PrefixBuild b2 = build_prefix(q, *bb, e_u, x, 1.0);
  CHECK(b2.prefix.row(0).cwiseAbs().maxCoeff() > 0.0);
  CHECK(b2.prefix.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("slot vectors carry the gamma scale") {
  auto bb = tiny_backbone();
  PluginParams p = PluginParams::init(8, bb->hidden_dim(), compute_gamma(*bb), 5, 0.1);
  CHECK((system_vector(p) - p.gamma * p.theta_sys.row(0).transpose()).cwiseAbs().maxCoeff() ==
        0.0);

  Vector e_u = Vector::Zero(8);
  e_u(0) = 1.0;
  CHECK((user_vector(p, e_u) - p.gamma * p.pag.forward(e_u)).cwiseAbs().maxCoeff() == 0.0);

  Vector wrong = Vector::Zero(9);
  CHECK_THROWS_AS(user_vector(p, wrong), InvalidInputError);
  CHECK_THROWS_AS(build_prefix(p, *bb, wrong, bb->tokenize("x"), 1.0), InvalidInputError);
  CHECK_THROWS_AS(build_prefix(p, *bb, e_u, bb->tokenize("x"), -1.0), InvalidInputError);
}

TEST_CASE("pooled input embedding is the column mean of the token rows") {
  auto bb = tiny_backbone();
  const auto ids = bb->tokenize("xyz");
  const Matrix rows = bb->embed_tokens(ids);
  const Vector pooled = pooled_input_embedding(*bb, ids);
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    double mean = 0.0;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) mean += rows(i, j);
    mean /= double(rows.rows());
    CHECK(pooled(j) == Catch::Approx(mean).epsilon(1e-14));
  }
  CHECK_THROWS_AS(pooled_input_embedding(*bb, std::vector<int>{}), InvalidInputError);
}

TEST_CASE("alpha gates gradient flow into the profile projector") {
  auto bb = tiny_backbone();
  PluginParams p = PluginParams::init(8, bb->hidden_dim(), compute_gamma(*bb), 77);
  Vector e_u = Vector::Ones(8) / std::sqrt(8.0);
  const auto x = bb->tokenize("input");
  Matrix dprefix = Matrix::Ones(3, bb->hidden_dim());

  // With the output layers zero-initialized, gradient flow reaches w2/b2
  // first; w1 only picks up gradient once w2 is nonzero.
  PrefixBuild gated = build_prefix(p, *bb, e_u, x, 0.0);
  p.zero_grad();
  backprop_prefix(p, gated, dprefix);
  CHECK(p.pag.gw1.cwiseAbs().maxCoeff() == 0.0);  // user slot blocked at alpha = 0
  CHECK(p.pag.gw2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.qry.gw2.cwiseAbs().maxCoeff() > 0.0);
  CHECK(p.g_theta.cwiseAbs().maxCoeff() > 0.0);

  PrefixBuild open = build_prefix(p, *bb, e_u, x, 1.0);
  p.zero_grad();
  backprop_prefix(p, open, dprefix);
  CHECK(p.pag.gw2.cwiseAbs().maxCoeff() > 0.0);

  Matrix bad = Matrix::Ones(2, bb->hidden_dim());
  CHECK_THROWS_AS(backprop_prefix(p, open, bad), InvalidInputError);
}

TEST_CASE("checkpoints round-trip values, metadata, and reject damage") {
  testutil::TempDir dir;
  auto bb = tiny_backbone();
  PluginParams p = PluginParams::init(8, bb->hidden_dim(), compute_gamma(*bb), 13, 0.02);
  // Perturb every tensor so the file carries non-trivial content.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> gauss(0.0, 0.3);
  for (ParamRef& r : p.params()) {
    for (Eigen::Index i = 0; i < r.value->size(); ++i) r.value->data()[i] += gauss(rng);
  }

  CheckpointMeta meta{bb->parameter_digest(), "cfg-digest-123"};
  const auto path_a = dir / "a.ckpt";
  save_checkpoint(path_a, p, meta);

  auto [p1, meta1] = load_checkpoint(path_a);
  CHECK(meta1.backbone_id == meta.backbone_id);
  CHECK(meta1.config_digest == "cfg-digest-123");
  CHECK(p1.hidden() == p.hidden());
  CHECK(p1.profile_dim() == 8);
  // Storage is f32, so one save/load quantizes once...
  CHECK((p1.theta_sys - p.theta_sys).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((p1.pag.w1 - p.pag.w1).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(p1.gamma == Catch::Approx(p.gamma).epsilon(1e-7));

  // ...and is bit-stable from then on: re-saving the loaded parameters
  // reproduces the file exactly, and a second load matches digest-for-digest.
  const auto path_b = dir / "b.ckpt";
  save_checkpoint(path_b, p1, meta1);
  CHECK(testutil::slurp(path_a) == testutil::slurp(path_b));
  auto [p2, meta2] = load_checkpoint(path_b);
  CHECK(p2.value_digest() == p1.value_digest());

  SECTION("flipped byte in the tensor payload") {
    testutil::corrupt_byte(path_a, 200);
    CHECK_THROWS_AS(load_checkpoint(path_a), CacheIntegrityError);
  }
  SECTION("truncated file") {
    const std::string full = testutil::slurp(path_a);
    atomic_write_file(path_a, full.substr(0, full.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path_a), CacheIntegrityError);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), DataError);
  }
}

TEST_CASE("value digest distinguishes parameter changes") {
  PluginParams a = PluginParams::init(4, 6, 1.5, 2);
  PluginParams b = PluginParams::init(4, 6, 1.5, 2);
  CHECK(a.value_digest() == b.value_digest());
  b.theta_sys(0, 0) += 1e-9;
  CHECK(a.value_digest() != b.value_digest());
}

TEST_CASE("prefix stays three rows no matter how long the history is") {
  auto bb = tiny_backbone();
  PluginParams p = PluginParams::init(16, bb->hidden_dim(), compute_gamma(*bb), 3, 0.05);
  const auto x = bb->tokenize("fixed question text");

  auto prefix_rows_for = [&](int items) {
    // A longer history only changes e_u's direction, never the geometry.
    Vector e_u = Vector::Zero(16);
    for (int i = 0; i < items; ++i) e_u(i % 16) += (i % 3) - 1.0 + 0.25;
    e_u.normalize();
    return build_prefix(p, *bb, e_u, x, 1.0).prefix.rows();
  };
  CHECK(prefix_rows_for(10) == 3);
  CHECK(prefix_rows_for(1000) == 3);
}
