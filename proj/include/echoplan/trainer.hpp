#pragma once

#include "echoplan/cfc.hpp"
#include "echoplan/metrics.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace echoplan::trainer {

using ad::Matrix;
using ad::ParamStore;
using model::Model;
using model::ModelConfig;

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 5e-5;
  double weight_decay = 1e-2;
  int batch_size = 4;
  double lambda_futbev = 0.5;
  double lambda_curbev = 0.1;
  int n_s = 16;
  int k = 64;
  std::uint64_t seed = 0;
  std::string dataset;  // path to a split directory
  world::GridSpec grid;

  void validate() const;  // throws with the offending field named
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  std::uint64_t hash() const;
  ModelConfig model_config() const;
};

struct LossRow {
  long step = 0;
  double traj = 0.0;
  double futbev = 0.0;
  double curbev = 0.0;
  double total = 0.0;
};

struct Checkpoint {
  TrainConfig config;
  ParamStore params;
  ParamStore opt_m;
  ParamStore opt_v;
  long step = 0;
  std::vector<LossRow> history;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
  Model make_model() const { return Model(config.model_config(), params); }
};

// Decoupled-weight-decay adaptive-moment update. Parameters and moments are
// rounded through f32 after every step so checkpoints round-trip bit-exactly.
struct AdamW {
  double lr = 5e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  ParamStore m;
  ParamStore v;

  void step(ParamStore& params, const std::map<std::string, Matrix>& grads);
};

class Trainer {
 public:
  Trainer(TrainConfig config, const std::vector<world::Episode>* dataset);
  Trainer(Checkpoint checkpoint, const std::vector<world::Episode>* dataset);

  // One optimizer step over the next scheduled batch; returns the logged row.
  LossRow run_step();
  void run_steps(long n);
  void run_all_epochs();

  long steps_per_epoch() const;
  long total_steps() const { return steps_per_epoch() * config_.epochs; }
  long step() const { return step_; }
  const Model& model() const { return model_; }
  const std::vector<LossRow>& history() const { return history_; }
  Checkpoint checkpoint() const;

 private:
  std::vector<int> epoch_order(long epoch) const;

  TrainConfig config_;
  const std::vector<world::Episode>* dataset_;
  Model model_;
  AdamW opt_;
  long step_ = 0;
  std::vector<LossRow> history_;
  std::vector<std::pair<int, int>> samples_;  // (episode, frame) with a t+1 frame
};

// Open-loop evaluation of a trained model over every evaluable frame of the
// episodes (both protocols plus the temporal-consistency MSE).
metrics::OpenLoopReport evaluate_open_loop(const Model& m, const std::vector<world::Episode>& episodes,
                                           const cfc::LossWeights& weights = {});

struct AblationArm {
  std::string name;
  TrainConfig config;
};

struct ArmResult {
  std::string name;
  TrainConfig config;
  metrics::OpenLoopReport report;
};

std::vector<ArmResult> run_ablation(const std::vector<AblationArm>& arms,
                                    const std::vector<world::Episode>& train_set,
                                    const std::vector<world::Episode>& eval_set, int max_workers);

std::string ablation_to_json(const std::vector<ArmResult>& results);
std::string ablation_to_table(const std::vector<ArmResult>& results);

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path);

}  // namespace echoplan::trainer
