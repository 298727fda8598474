#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "echoplan/cfc.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <random>

using namespace echoplan;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using model::Model;
using model::ModelConfig;
using world::Command;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.h = 4;
  cfg.w = 4;
  cfg.k = 6;
  cfg.n_s = 3;
  cfg.heads = 2;
  cfg.mln_hidden = 5;
  return cfg;
}

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model(cfg, model::init_params(cfg, seed));
}

world::SemanticRaster random_raster(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  world::SemanticRaster raster(cfg.h, cfg.w);
  for (auto& v : raster.values) v = static_cast<float>(u(rng));
  return raster;
}

}  // namespace

TEST_CASE("forward loop: shapes and trajectory conditioning") {
  ModelConfig cfg = small_config();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = make_model(cfg, seed);
    Tape tape;
    Var raster = tape.constant(model::raster_to_matrix(random_raster(cfg, seed + 50)));
    Var tokens = cfc::scene_tokens(tape, m, raster, Command::kStraight);
    CHECK(tape.value(tokens).rows() == cfg.n_s);
    CHECK(tape.value(tokens).cols() == cfg.k);

    std::mt19937_64 rng(seed);
    Matrix traj_a = ad::randn(rng, cfg.n_t, 2, 1.0);
    Matrix traj_b = ad::randn(rng, cfg.n_t, 2, 1.0);
    auto [tok_a, bev_a] = cfc::forward_loop(tape, m, tokens, tape.constant(traj_a));
    auto [tok_b, bev_b] = cfc::forward_loop(tape, m, tokens, tape.constant(traj_b));
    CHECK(tape.value(tok_a).rows() == cfg.n_s);
    CHECK(tape.value(bev_a).rows() == cfg.cells());
    CHECK(tape.value(bev_a).cols() == cfg.k);
    // The motion-conditioned normalization must make the predicted future
    // scene depend on the trajectory.
    CHECK((tape.value(bev_a) - tape.value(bev_b)).cwiseAbs().maxCoeff() > 1e-9);
  }
}

TEST_CASE("future bev loss reaches the predicted trajectory") {
  ModelConfig cfg = small_config();
  Model m = make_model(cfg, 3);
  Tape tape;
  Var raster = tape.constant(model::raster_to_matrix(random_raster(cfg, 60)));
  Var tokens = cfc::scene_tokens(tape, m, raster, Command::kLeft);
  std::mt19937_64 rng(61);
  Matrix traj = ad::randn(rng, cfg.n_t, 2, 1.0);
  Var vtraj = tape.leaf(traj);
  auto [tok, bev] = cfc::forward_loop(tape, m, tokens, vtraj);
  Var target = tape.constant(Matrix::Zero(cfg.cells(), cfg.k));
  Var loss = model::bev_mse(tape, bev, target);
  tape.backward(loss);
  CHECK(tape.grad_or_zero(vtraj).cwiseAbs().maxCoeff() > 1e-12);

  double err = testutil::fd_check({traj}, [&](Tape& t, const std::vector<Var>& v) {
    Var r = t.constant(model::raster_to_matrix(random_raster(cfg, 60)));
    Var tok2 = cfc::scene_tokens(t, m, r, Command::kLeft);
    auto [tt, bb] = cfc::forward_loop(t, m, tok2, v[0]);
    return model::bev_mse(t, bb, t.constant(Matrix::Zero(cfg.cells(), cfg.k)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("bev mse: hand arithmetic") {
  // Constant difference of 2 -> 4.0.
  Matrix pred = Matrix::Constant(8, 4, 3.0);
  Matrix target = Matrix::Constant(8, 4, 1.0);
  Tape tape;
  double v = tape.scalar(model::bev_mse(tape, tape.constant(pred), tape.constant(target)));
  CHECK(std::abs(v - 4.0) < 1e-12);

  // One unit entry in a 32*32 x 64 map -> 1/65536.
  Matrix p2 = Matrix::Zero(1024, 64);
  p2(17, 3) = 1.0;
  Tape t2;
  double v2 = t2.scalar(model::bev_mse(t2, t2.constant(p2), t2.constant(Matrix::Zero(1024, 64))));
  CHECK(std::abs(v2 - 1.52587890625e-5) < 1e-18);
}

TEST_CASE("bev mse: invariant under a shared permutation of cells") {
  std::mt19937_64 rng(70);
  Matrix pred = ad::randn(rng, 16, 6, 1.0);
  Matrix target = ad::randn(rng, 16, 6, 1.0);
  std::vector<int> perm(16);
  for (int i = 0; i < 16; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix pp(16, 6), tp(16, 6);
  for (int i = 0; i < 16; ++i) {
    pp.row(i) = pred.row(perm[i]);
    tp.row(i) = target.row(perm[i]);
  }
  Tape tape;
  double a = tape.scalar(model::bev_mse(tape, tape.constant(pred), tape.constant(target)));
  double b = tape.scalar(model::bev_mse(tape, tape.constant(pp), tape.constant(tp)));
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("echo loop: zero new parameters") {
  ModelConfig cfg = small_config();
  Model m = make_model(cfg, 4);

  Tape fwd_tape;
  Var raster = fwd_tape.constant(model::raster_to_matrix(random_raster(cfg, 80)));
  Var tokens = cfc::scene_tokens(fwd_tape, m, raster, Command::kLeft);
  Var multi = m.plan(fwd_tape, tokens);
  Var traj = m.select_branch(fwd_tape, multi, Command::kLeft);
  auto [ft, fb] = cfc::forward_loop(fwd_tape, m, tokens, traj);
  std::set<std::string> forward_names = fwd_tape.touched_params();

  Tape echo_tape;
  Var future_bev = echo_tape.constant(fwd_tape.value(fb));
  cfc::EchoResult echo = cfc::echo_loop(echo_tape, m, future_bev, Command::kRight);
  for (const std::string& name : echo_tape.touched_params())
    CHECK_MESSAGE(forward_names.count(name) == 1, "echo-only parameter: ", name);

  CHECK(echo_tape.value(echo.reversed_traj).rows() == cfg.n_t);
  CHECK(echo_tape.value(echo.reversed_traj).cols() == 2);
  CHECK(echo_tape.value(echo.current_tokens).rows() == cfg.n_s);
  CHECK(echo_tape.value(echo.current_bev).rows() == cfg.cells());
  CHECK(echo_tape.value(echo.current_bev).cols() == cfg.k);
}

TEST_CASE("current bev loss reaches command embeddings and token learner") {
  ModelConfig cfg = small_config();
  Model m = make_model(cfg, 5);
  Tape tape;
  std::mt19937_64 rng(90);
  Var future_bev = tape.constant(ad::randn(rng, cfg.cells(), cfg.k, 1.0));
  cfc::EchoResult echo = cfc::echo_loop(tape, m, future_bev, Command::kRight);
  Var loss = model::bev_mse(tape, echo.current_bev, tape.constant(Matrix::Zero(cfg.cells(), cfg.k)));
  tape.backward(loss);
  for (const char* name : {"cmd.embed", "tl.score_w"}) {
    Var p(&tape, tape.param_nodes().at(name));
    CHECK_MESSAGE(tape.grad_or_zero(p).cwiseAbs().maxCoeff() > 1e-14, "no gradient on ", name);
  }
}

TEST_CASE("total loss arithmetic") {
  cfc::LossWeights w;  // 0.5 / 0.1 defaults
  CHECK(std::abs(cfc::total_loss(1.0, 2.0, 3.0, w) - 2.3) < 1e-12);
  CHECK(cfc::total_loss(0.7, 9.0, 9.0, {0.0, 0.0}) == 0.7);
  // Linear in each weight.
  double base = cfc::total_loss(1.0, 2.0, 3.0, {0.0, 0.0});
  CHECK(cfc::total_loss(1.0, 2.0, 3.0, {0.4, 0.0}) - base == doctest::Approx(0.8));
  CHECK(cfc::total_loss(1.0, 2.0, 3.0, {0.0, 0.2}) - base == doctest::Approx(0.6));
}

TEST_CASE("training graph: bundle identity is exact") {
  ModelConfig cfg = small_config();
  Model m = make_model(cfg, 6);
  world::SemanticRaster r_t = random_raster(cfg, 100);
  world::SemanticRaster r_t1 = random_raster(cfg, 101);
  std::mt19937_64 rng(102);
  Matrix gt = ad::randn(rng, cfg.n_t, 2, 1.0);
  Tape tape;
  cfc::CfcGraph g = cfc::build_cfc_graph(tape, m, r_t, r_t1, Command::kLeft, gt, {});
  cfc::LossBundle bundle = cfc::bundle_from_graph(tape, g);
  CHECK(bundle.total == cfc::total_loss(bundle.traj, bundle.futbev, bundle.curbev, {}));
  CHECK(bundle.total == tape.scalar(g.loss_total));
  CHECK(bundle.traj >= 0.0);
  CHECK(bundle.futbev >= 0.0);
  CHECK(bundle.curbev >= 0.0);
}

TEST_CASE("training graph: targets are detached") {
  ModelConfig cfg = small_config();
  Model m = make_model(cfg, 7);
  Tape tape;
  cfc::CfcGraph g = cfc::build_cfc_graph(tape, m, random_raster(cfg, 110), random_raster(cfg, 111),
                                         Command::kStraight, Matrix::Zero(cfg.n_t, 2), {});
  tape.backward(g.loss_total);
  CHECK(!tape.has_grad(g.target_future));
  CHECK(!tape.has_grad(g.target_current));
  // Every parameter the graph touched gets some gradient signal somewhere.
  Var any(&tape, tape.param_nodes().at("enc.lift_w"));
  CHECK(tape.grad_or_zero(any).cwiseAbs().maxCoeff() > 1e-14);
}

TEST_CASE("infer skips the training-only blocks") {
  ModelConfig cfg = small_config();
  Model m = make_model(cfg, 8);
  world::SemanticRaster raster = random_raster(cfg, 120);
  m.clear_trace();
  Matrix traj = cfc::infer(m, raster, Command::kRight);
  CHECK(traj.rows() == cfg.n_t);
  CHECK(traj.cols() == 2);
  for (const std::string& block : m.trace()) {
    CHECK(block != "mln");
    CHECK(block != "token_fuse");
    CHECK(block != "echo_loop");
  }
  CHECK(std::count(m.trace().begin(), m.trace().end(), "plan") == 1);
}

TEST_CASE("infer equals the training graph's predicted trajectory") {
  ModelConfig cfg = small_config();
  Model m = make_model(cfg, 9);
  world::SemanticRaster raster = random_raster(cfg, 130);
  Matrix inf = cfc::infer(m, raster, Command::kLeft);
  Tape tape;
  cfc::CfcGraph g = cfc::build_cfc_graph(tape, m, raster, random_raster(cfg, 131), Command::kLeft,
                                         Matrix::Zero(cfg.n_t, 2), {});
  CHECK((inf - tape.value(g.pred_traj)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("reverse command is an involution") {
  for (Command c : {Command::kLeft, Command::kStraight, Command::kRight})
    CHECK(world::reverse_command(world::reverse_command(c)) == c);
}
