#pragma once

#include "echoplan/autodiff.hpp"
#include "echoplan/world.hpp"

#include <string>
#include <vector>

namespace echoplan::model {

using ad::Matrix;
using ad::ParamStore;
using ad::Tape;
using ad::Var;
using world::Command;

struct ModelConfig {
  int h = 32;          // BEV grid rows
  int w = 32;          // BEV grid cols
  int k_sem = world::GridSpec::k_sem;
  int k = 64;          // feature channels
  int n_s = 16;        // scene tokens
  int n_t = world::kNumWaypoints;
  int n_c = 3;         // navigation commands
  int heads = 4;
  int sa_layers = 2;
  int mln_hidden = 32;
  double ln_eps = 1e-5;

  int cells() const { return h * w; }
  bool operator==(const ModelConfig&) const = default;
};

// Fixed command -> trajectory branch order, shared by forward and echo passes.
inline int branch_index(Command c) { return static_cast<int>(c); }

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Flattens a raster to a (h*w) x k_sem matrix, cell-major (row, col).
Matrix raster_to_matrix(const world::SemanticRaster& raster);

// All blocks of the planner. Methods are pure given the parameter store; the
// same instance (and therefore the same named tensors) serves the forward and
// echo passes. Each call appends its block name to the execution trace.
class Model {
 public:
  Model(ModelConfig cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {}

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Var encode_bev(Tape& tape, Var raster) const;
  Var encode_command(Tape& tape, Command command, Var bev) const;
  Var token_learn(Tape& tape, Var bev) const;
  Var token_fuse(Tape& tape, Var tokens) const;
  Var mln(Tape& tape, Var tokens, Var trajectory) const;
  Var self_attention_refine(Tape& tape, Var tokens) const;
  // Cross-attends the waypoint queries to scene tokens; (n_c*n_t) x 2 output,
  // branch b occupying rows [b*n_t, (b+1)*n_t).
  Var plan(Tape& tape, Var tokens) const;
  Var select_branch(Tape& tape, Var multi, Command command) const;

  // token_learn's cell-weight map (cells x n_s, columns sum to 1); exposed
  // for the distribution invariants.
  Var token_learn_alpha(Tape& tape, Var bev) const;

  const std::vector<std::string>& trace() const { return trace_; }
  void clear_trace() const { trace_.clear(); }

  // Row-stochastic attention maps recorded by the most recent block calls.
  const std::vector<Var>& attention_probe() const { return attn_probe_; }
  void clear_attention_probe() const { attn_probe_.clear(); }

 private:
  Var mha(Tape& tape, Var queries, Var keys_values, const std::string& prefix) const;
  Var param(Tape& tape, const std::string& name) const;
  void check_bev_shape(const Matrix& m, int expect_cols, const char* op) const;

  ModelConfig cfg_;
  mutable ParamStore params_;
  mutable std::vector<std::string> trace_;
  mutable std::vector<Var> attn_probe_;
};

// Eq.-style losses; mean reductions so weights stay scale-free.
Var traj_loss(Tape& tape, Var pred, Var gt);
Var bev_mse(Tape& tape, Var pred, Var target);

// Checkpoint tensor-table IO (single file: named f32 payloads + JSON manifest).
void save_tensor_file(const std::string& path, const std::vector<std::pair<std::string, const ParamStore*>>& groups,
                      const std::string& manifest_json);
void load_tensor_file(const std::string& path, const std::vector<std::pair<std::string, ParamStore*>>& groups,
                      std::string* manifest_json);

}  // namespace echoplan::model
