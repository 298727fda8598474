#pragma once

#include "echoplan/model.hpp"

namespace echoplan::cfc {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using model::Model;
using world::Command;

struct LossWeights {
  double lambda_futbev = 0.5;
  double lambda_curbev = 0.1;
};

struct LossBundle {
  double traj = 0.0;
  double futbev = 0.0;
  double curbev = 0.0;
  double total = 0.0;
};

// Graph handles for one CFC training step on a single frame.
struct CfcGraph {
  Var pred_traj;       // T-hat_P, n_t x 2
  Var future_tokens;   // n_s x k
  Var future_bev;      // cells x k
  Var reversed_traj;   // echo trajectory proposal
  Var current_tokens;
  Var current_bev;
  Var target_future;   // detached encoder output on the future raster
  Var target_current;  // detached encoder output on the current raster
  Var loss_traj;
  Var loss_futbev;
  Var loss_curbev;
  Var loss_total;
};

// Current raster + command -> scene tokens S_t (the sparse scene module).
Var scene_tokens(Tape& tape, const Model& m, Var raster, Command command);

// S_t and the predicted trajectory -> (S-hat_{t+1}, B-hat_{t+1}).
std::pair<Var, Var> forward_loop(Tape& tape, const Model& m, Var tokens, Var pred_traj);

// Predicted future BEV + reversed command -> (T-hat'_p, S-hat'_t, B-hat_t).
// Every block resolves to the same named parameters as the forward path.
struct EchoResult {
  Var reversed_traj;
  Var current_tokens;
  Var current_bev;
};
EchoResult echo_loop(Tape& tape, const Model& m, Var future_bev, Command reversed_command);

double total_loss(double traj, double futbev, double curbev, const LossWeights& w);

// Builds the full two-loop training graph for one frame. Targets are the
// encoder applied to ground-truth rasters, detached so no gradient can move
// them within a step.
CfcGraph build_cfc_graph(Tape& tape, const Model& m, const world::SemanticRaster& raster_t,
                         const world::SemanticRaster& raster_t1_in_t, Command command,
                         const Matrix& gt_future, const LossWeights& weights);

// Inference: forward prediction only. Never touches mln/token_fuse/echo.
Matrix infer(const Model& m, const world::SemanticRaster& raster, Command command);

LossBundle bundle_from_graph(const Tape& tape, const CfcGraph& g);

}  // namespace echoplan::cfc
