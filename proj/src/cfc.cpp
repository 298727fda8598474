#include "echoplan/cfc.hpp"

namespace echoplan::cfc {

Var scene_tokens(Tape& tape, const Model& m, Var raster, Command command) {
  Var bev = m.encode_bev(tape, raster);
  Var aware = m.encode_command(tape, command, bev);
  Var tokens = m.token_learn(tape, aware);
  return m.self_attention_refine(tape, tokens);
}

std::pair<Var, Var> forward_loop(Tape& tape, const Model& m, Var tokens, Var pred_traj) {
  Var future_tokens = m.self_attention_refine(tape, m.mln(tape, tokens, pred_traj));
  Var future_bev = m.token_fuse(tape, future_tokens);
  return {future_tokens, future_bev};
}

EchoResult echo_loop(Tape& tape, const Model& m, Var future_bev, Command reversed_command) {
  Var aware = m.encode_command(tape, reversed_command, future_bev);
  Var future_tokens = m.self_attention_refine(tape, m.token_learn(tape, aware));
  Var multi = m.plan(tape, future_tokens);
  Var reversed_traj = m.select_branch(tape, multi, reversed_command);
  Var current_tokens = m.self_attention_refine(tape, m.mln(tape, future_tokens, reversed_traj));
  Var current_bev = m.token_fuse(tape, current_tokens);
  return {reversed_traj, current_tokens, current_bev};
}

double total_loss(double traj, double futbev, double curbev, const LossWeights& w) {
  // Same association as the graph arithmetic so the bundle identity is exact.
  return traj + (w.lambda_futbev * futbev + w.lambda_curbev * curbev);
}

CfcGraph build_cfc_graph(Tape& tape, const Model& m, const world::SemanticRaster& raster_t,
                         const world::SemanticRaster& raster_t1_in_t, Command command,
                         const Matrix& gt_future, const LossWeights& weights) {
  CfcGraph g;
  Var raster = tape.constant(model::raster_to_matrix(raster_t));

  Var tokens = scene_tokens(tape, m, raster, command);
  Var multi = m.plan(tape, tokens);
  g.pred_traj = m.select_branch(tape, multi, command);
  g.loss_traj = model::traj_loss(tape, g.pred_traj, tape.constant(gt_future));

  auto [future_tokens, future_bev] = forward_loop(tape, m, tokens, g.pred_traj);
  g.future_tokens = future_tokens;
  g.future_bev = future_bev;

  // Supervision targets: encoder over ground-truth rasters, gradient-stopped.
  g.target_future = tape.detach(m.encode_bev(tape, tape.constant(model::raster_to_matrix(raster_t1_in_t))));
  g.loss_futbev = model::bev_mse(tape, g.future_bev, g.target_future);

  EchoResult echo = echo_loop(tape, m, g.future_bev, world::reverse_command(command));
  g.reversed_traj = echo.reversed_traj;
  g.current_tokens = echo.current_tokens;
  g.current_bev = echo.current_bev;

  g.target_current = tape.detach(m.encode_bev(tape, raster));
  g.loss_curbev = model::bev_mse(tape, g.current_bev, g.target_current);

  g.loss_total = tape.add(g.loss_traj, tape.add(tape.scale(g.loss_futbev, weights.lambda_futbev),
                                                tape.scale(g.loss_curbev, weights.lambda_curbev)));
  return g;
}

Matrix infer(const Model& m, const world::SemanticRaster& raster, Command command) {
  Tape tape;
  Var tokens = scene_tokens(tape, m, tape.constant(model::raster_to_matrix(raster)), command);
  Var multi = m.plan(tape, tokens);
  Var traj = m.select_branch(tape, multi, command);
  return traj.value();
}

LossBundle bundle_from_graph(const Tape& tape, const CfcGraph& g) {
  LossBundle b;
  b.traj = tape.scalar(g.loss_traj);
  b.futbev = tape.scalar(g.loss_futbev);
  b.curbev = tape.scalar(g.loss_curbev);
  b.total = tape.scalar(g.loss_total);
  return b;
}

}  // namespace echoplan::cfc
