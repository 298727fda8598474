#include "echoplan/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace echoplan::trainer {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::runtime_error("config field 'epochs' must be >= 1");
  if (!(learning_rate > 0.0)) throw std::runtime_error("config field 'learning_rate' must be > 0");
  if (weight_decay < 0.0) throw std::runtime_error("config field 'weight_decay' must be >= 0");
  if (batch_size < 1) throw std::runtime_error("config field 'batch_size' must be >= 1");
  if (lambda_futbev < 0.0) throw std::runtime_error("config field 'lambda_futbev' must be >= 0");
  if (lambda_curbev < 0.0) throw std::runtime_error("config field 'lambda_curbev' must be >= 0");
  if (n_s < 1) throw std::runtime_error("config field 'n_s' must be >= 1");
  if (k < 4 || k % 4 != 0) throw std::runtime_error("config field 'k' must be a positive multiple of 4");
  if (grid.h < 1 || grid.w < 1) throw std::runtime_error("config field 'grid' must have positive dims");
  if (!(grid.cell_size > 0.0)) throw std::runtime_error("config field 'grid.cell_size' must be > 0");
}

std::string TrainConfig::to_json() const {
  json j = {
      {"epochs", epochs},
      {"learning_rate", learning_rate},
      {"weight_decay", weight_decay},
      {"batch_size", batch_size},
      {"lambda_futbev", lambda_futbev},
      {"lambda_curbev", lambda_curbev},
      {"n_s", n_s},
      {"k", k},
      {"seed", seed},
      {"dataset", dataset},
      {"grid", {{"h", grid.h}, {"w", grid.w}, {"cell_size", grid.cell_size}}},
  };
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("config is not valid JSON");
  TrainConfig c;
  auto get = [&j](const char* field, auto& out) {
    if (!j.contains(field)) return;
    try {
      out = j.at(field).get<std::decay_t<decltype(out)>>();
    } catch (const json::exception&) {
      throw std::runtime_error(std::string("config field '") + field + "' has the wrong type");
    }
  };
  get("epochs", c.epochs);
  get("learning_rate", c.learning_rate);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("lambda_futbev", c.lambda_futbev);
  get("lambda_curbev", c.lambda_curbev);
  get("n_s", c.n_s);
  get("k", c.k);
  get("seed", c.seed);
  get("dataset", c.dataset);
  if (j.contains("grid")) {
    try {
      c.grid.h = j.at("grid").at("h").get<int>();
      c.grid.w = j.at("grid").at("w").get<int>();
      c.grid.cell_size = j.at("grid").at("cell_size").get<double>();
    } catch (const json::exception&) {
      throw std::runtime_error("config field 'grid' must be {h, w, cell_size}");
    }
  }
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> known = {"epochs",        "learning_rate", "weight_decay", "batch_size",
                                               "lambda_futbev", "lambda_curbev", "n_s",          "k",
                                               "seed",          "dataset",       "grid"};
    if (!known.count(key)) throw std::runtime_error("unknown config field '" + key + "'");
  }
  c.validate();
  return c;
}

std::uint64_t TrainConfig::hash() const {
  std::string s = to_json();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.h = grid.h;
  mc.w = grid.w;
  mc.n_s = n_s;
  mc.k = k;
  return mc;
}

static double snap32(double v) { return static_cast<double>(static_cast<float>(v)); }

void AdamW::step(ParamStore& params, const std::map<std::string, Matrix>& grads) {
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& [name, p] : params.tensors) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Matrix& g = git->second;
    // A parameter with no gradient signal is left untouched, decay included,
    // so a disabled loss branch leaves its blocks frozen.
    if (g.size() == 0 || g.cwiseAbs().maxCoeff() == 0.0) continue;
    if (!m.has(name)) m.insert(name, Matrix::Zero(p.rows(), p.cols()));
    if (!v.has(name)) v.insert(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& mm = m.at(name);
    Matrix& vv = v.at(name);
    mm = beta1 * mm + (1.0 - beta1) * g;
    vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
    Matrix mhat = mm / bc1;
    Matrix vhat = vv / bc2;
    p -= lr * weight_decay * p;
    p -= (lr * mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    p = p.unaryExpr(&snap32);
    mm = mm.unaryExpr(&snap32);
    vv = vv.unaryExpr(&snap32);
  }
}

Trainer::Trainer(TrainConfig config, const std::vector<world::Episode>* dataset)
    : config_(std::move(config)),
      dataset_(dataset),
      model_(config_.model_config(), model::init_params(config_.model_config(), config_.seed)) {
  config_.validate();
  if (!dataset_ || dataset_->empty()) throw std::runtime_error("train: dataset is empty");
  opt_.lr = config_.learning_rate;
  opt_.weight_decay = config_.weight_decay;
  for (int e = 0; e < static_cast<int>(dataset_->size()); ++e) {
    const world::Episode& ep = (*dataset_)[e];
    for (int f = 0; f + 1 < static_cast<int>(ep.frames.size()); ++f) samples_.emplace_back(e, f);
  }
  if (samples_.empty()) throw std::runtime_error("train: no frame has a t+1 frame");
}

Trainer::Trainer(Checkpoint checkpoint, const std::vector<world::Episode>* dataset)
    : Trainer(checkpoint.config, dataset) {
  model_ = Model(config_.model_config(), checkpoint.params);
  opt_.m = checkpoint.opt_m;
  opt_.v = checkpoint.opt_v;
  opt_.t = checkpoint.step;
  step_ = checkpoint.step;
  history_ = checkpoint.history;
}

long Trainer::steps_per_epoch() const {
  return (static_cast<long>(samples_.size()) + config_.batch_size - 1) / config_.batch_size;
}

std::vector<int> Trainer::epoch_order(long epoch) const {
  std::vector<int> order(samples_.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LossRow Trainer::run_step() {
  long spe = steps_per_epoch();
  long epoch = step_ / spe;
  long pos = step_ % spe;
  std::vector<int> order = epoch_order(epoch);
  std::size_t lo = static_cast<std::size_t>(pos) * config_.batch_size;
  std::size_t hi = std::min(lo + config_.batch_size, order.size());

  cfc::LossWeights weights{config_.lambda_futbev, config_.lambda_curbev};
  ad::Tape tape;
  ad::Var batch_total;
  LossRow row;
  row.step = step_ + 1;
  int n = static_cast<int>(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    auto [e, f] = samples_[order[i]];
    const world::Episode& ep = (*dataset_)[e];
    const world::Frame& frame = ep.frames[f];
    const world::Frame& next = ep.frames[f + 1];
    world::SemanticRaster future_in_t = world::warp_raster(next.raster, next.ego, frame.ego, ep.grid);

    Matrix gt(config_.model_config().n_t, 2);
    for (int kk = 0; kk < gt.rows(); ++kk) {
      gt(kk, 0) = frame.gt_future[2 * kk];
      gt(kk, 1) = frame.gt_future[2 * kk + 1];
    }
    cfc::CfcGraph g = cfc::build_cfc_graph(tape, model_, frame.raster, future_in_t, frame.command, gt, weights);
    cfc::LossBundle b = cfc::bundle_from_graph(tape, g);
    row.traj += b.traj / n;
    row.futbev += b.futbev / n;
    row.curbev += b.curbev / n;
    row.total += b.total / n;
    ad::Var scaled = tape.scale(g.loss_total, 1.0 / n);
    batch_total = batch_total.valid() ? tape.add(batch_total, scaled) : scaled;
  }

  if (!std::isfinite(row.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << row.step << " (traj=" << row.traj << ", futbev=" << row.futbev
       << ", curbev=" << row.curbev << ")";
    throw std::runtime_error(os.str());
  }

  tape.backward(batch_total);
  std::map<std::string, Matrix> grads;
  for (const auto& [name, idx] : tape.param_nodes()) grads[name] = tape.grad_or_zero(ad::Var(&tape, idx));
  opt_.step(model_.params(), grads);

  ++step_;
  history_.push_back(row);
  return row;
}

void Trainer::run_steps(long n) {
  for (long i = 0; i < n; ++i) run_step();
}

void Trainer::run_all_epochs() { run_steps(total_steps() - step_); }

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config_;
  c.params = model_.params();
  c.opt_m = opt_.m;
  c.opt_v = opt_.v;
  c.step = step_;
  c.history = history_;
  return c;
}

void Checkpoint::save(const std::string& path) const {
  json manifest = {
      {"config", json::parse(config.to_json())},
      {"config_hash", config.hash()},
      {"step", step},
      {"history", json::array()},
  };
  for (const LossRow& r : history)
    manifest["history"].push_back({r.step, r.traj, r.futbev, r.curbev, r.total});
  model::save_tensor_file(path, {{"model.", &params}, {"opt_m.", &opt_m}, {"opt_v.", &opt_v}}, manifest.dump());
}

Checkpoint Checkpoint::load(const std::string& path) {
  Checkpoint c;
  std::string manifest_text;
  model::load_tensor_file(path, {{"model.", &c.params}, {"opt_m.", &c.opt_m}, {"opt_v.", &c.opt_v}}, &manifest_text);
  json manifest = json::parse(manifest_text, nullptr, false);
  if (manifest.is_discarded()) throw std::runtime_error("malformed checkpoint: manifest is not JSON");
  c.config = TrainConfig::from_json(manifest.at("config").dump());
  c.step = manifest.at("step").get<long>();
  for (const auto& r : manifest.at("history")) {
    LossRow row;
    row.step = r.at(0).get<long>();
    row.traj = r.at(1).get<double>();
    row.futbev = r.at(2).get<double>();
    row.curbev = r.at(3).get<double>();
    row.total = r.at(4).get<double>();
    c.history.push_back(row);
  }
  return c;
}

metrics::OpenLoopReport evaluate_open_loop(const Model& m, const std::vector<world::Episode>& episodes,
                                           const cfc::LossWeights& weights) {
  metrics::OpenLoopReport report;
  std::vector<metrics::CollisionSample> samples;
  std::vector<metrics::Trajectory> preds, gts;
  double temporal_sum = 0.0;
  int temporal_n = 0;

  for (const world::Episode& ep : episodes) {
    int usable = static_cast<int>(ep.frames.size()) - world::kNumWaypoints - 1;
    for (int f = 0; f < usable; ++f) {
      const world::Frame& frame = ep.frames[f];
      const world::Frame& next = ep.frames[f + 1];

      metrics::Trajectory gt(world::kNumWaypoints, 2);
      for (int kk = 0; kk < world::kNumWaypoints; ++kk) {
        gt(kk, 0) = frame.gt_future[2 * kk];
        gt(kk, 1) = frame.gt_future[2 * kk + 1];
      }

      world::SemanticRaster future_in_t = world::warp_raster(next.raster, next.ego, frame.ego, ep.grid);
      ad::Tape tape;
      cfc::CfcGraph g = cfc::build_cfc_graph(tape, m, frame.raster, future_in_t, frame.command, gt, weights);

      metrics::Trajectory pred = g.pred_traj.value();
      preds.push_back(pred);
      gts.push_back(gt);
      samples.push_back({pred, &ep, f});
      temporal_sum += metrics::temporal_consistency(g.current_bev.value(), g.target_current.value());
      ++temporal_n;
    }
  }

  report.samples = static_cast<int>(preds.size());
  report.temporal_mse = temporal_n ? temporal_sum / temporal_n : 0.0;
  for (auto [entry, protocol] : {std::pair{&report.final_max, metrics::Protocol::kFinalMax},
                                 std::pair{&report.average, metrics::Protocol::kAverage}}) {
    for (int h = 0; h < 3; ++h) {
      int steps = metrics::kHorizonSteps[h];
      double l2_sum = 0.0;
      for (std::size_t i = 0; i < preds.size(); ++i) l2_sum += metrics::l2_at_horizon(preds[i], gts[i], steps, protocol);
      entry->l2[h] = preds.empty() ? 0.0 : l2_sum / preds.size();
      entry->collision[h] = metrics::collision_rate(samples, steps, protocol);
    }
    entry->l2_avg = (entry->l2[0] + entry->l2[1] + entry->l2[2]) / 3.0;
    entry->collision_avg = (entry->collision[0] + entry->collision[1] + entry->collision[2]) / 3.0;
  }
  return report;
}

std::vector<ArmResult> run_ablation(const std::vector<AblationArm>& arms,
                                    const std::vector<world::Episode>& train_set,
                                    const std::vector<world::Episode>& eval_set, int max_workers) {
  std::vector<ArmResult> results(arms.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= arms.size()) break;
      Trainer t(arms[i].config, &train_set);
      t.run_all_epochs();
      results[i].name = arms[i].name;
      results[i].config = arms[i].config;
      results[i].report =
          evaluate_open_loop(t.model(), eval_set, {arms[i].config.lambda_futbev, arms[i].config.lambda_curbev});
    }
  };
  int n_workers = std::max(1, std::min<int>(max_workers, static_cast<int>(arms.size())));
  std::vector<std::thread> threads;
  for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  return results;
}

std::string ablation_to_json(const std::vector<ArmResult>& results) {
  json arr = json::array();
  for (const ArmResult& r : results) {
    arr.push_back({{"name", r.name},
                   {"cfc", r.config.lambda_futbev > 0.0 || r.config.lambda_curbev > 0.0},
                   {"n_s", r.config.n_s},
                   {"lambda_futbev", r.config.lambda_futbev},
                   {"lambda_curbev", r.config.lambda_curbev},
                   {"seed", r.config.seed},
                   {"report", json::parse(r.report.to_json())}});
  }
  return arr.dump(2);
}

std::string ablation_to_table(const std::vector<ArmResult>& results) {
  std::ostringstream os;
  char buf[256];
  os << "arm                      N_s  CFC  l_fut l_cur |  L2(avg) fin/avg  |  CR%(avg) fin/avg\n";
  for (const ArmResult& r : results) {
    bool cfc_on = r.config.lambda_futbev > 0.0 || r.config.lambda_curbev > 0.0;
    std::snprintf(buf, sizeof(buf), "%-24s %3d  %s  %5.2f %5.2f |  %7.3f %7.3f  |  %7.3f %7.3f\n", r.name.c_str(),
                  r.config.n_s, cfc_on ? "yes" : " no", r.config.lambda_futbev, r.config.lambda_curbev,
                  r.report.final_max.l2_avg, r.report.average.l2_avg, r.report.final_max.collision_avg,
                  r.report.average.collision_avg);
    os << buf;
  }
  return os.str();
}

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "step,traj,futbev,curbev,total\n";
  for (const LossRow& r : history)
    out << r.step << "," << r.traj << "," << r.futbev << "," << r.curbev << "," << r.total << "\n";
}

}  // namespace echoplan::trainer
