#include "echoplan/closedloop.hpp"
#include "echoplan/harness.hpp"
#include "echoplan/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace echoplan;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("ECHOPLAN_SEED");
  if (!v) return std::nullopt;
  return std::strtoull(v, nullptr, 10);
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

world::Scenario scenario_mix(int i) {
  const world::Scenario kinds[4] = {world::Scenario::kStraight, world::Scenario::kLeftTurn,
                                    world::Scenario::kRightTurn, world::Scenario::kIntersectionMixed};
  return kinds[i % 4];
}

int cmd_gen_data(std::uint64_t seed, int episodes, double train_frac, const std::string& out,
                 const world::GridSpec& grid) {
  Timer timer;
  if (auto s = env_seed()) seed = *s;
  int n_train = static_cast<int>(episodes * train_frac);
  std::vector<world::Episode> train, eval;
  for (int i = 0; i < episodes; ++i) {
    world::Episode ep = world::generate_episode(seed + i, scenario_mix(i), grid);
    (i < n_train ? train : eval).push_back(std::move(ep));
  }
  world::save_dataset(train, out + "/train");
  world::save_dataset(eval, out + "/eval");

  harness::RunManifest manifest;
  manifest.command = "gen-data";
  manifest.config_hash = harness::fnv1a(std::to_string(seed) + ":" + std::to_string(episodes));
  manifest.dataset_hash = world::dataset_hash(out);
  manifest.outputs = {out + "/train", out + "/eval"};
  manifest.wall_time_s = timer.seconds();
  manifest.write(out + "/manifest.json");
  std::cout << "dataset hash " << std::hex << manifest.dataset_hash << std::dec << " (" << train.size()
            << " train / " << eval.size() << " eval episodes)\n";
  return harness::kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& loss_log) {
  Timer timer;
  trainer::TrainConfig config = trainer::TrainConfig::from_json(read_file(config_path));
  if (auto s = env_seed()) config.seed = *s;
  std::vector<world::Episode> dataset = world::load_dataset(config.dataset);
  trainer::Trainer t(config, &dataset);
  t.run_all_epochs();
  trainer::Checkpoint ckpt = t.checkpoint();
  ckpt.save(out);
  if (!loss_log.empty()) trainer::write_loss_csv(t.history(), loss_log);

  harness::RunManifest manifest;
  manifest.command = "train";
  manifest.config_hash = config.hash();
  manifest.dataset_hash = world::dataset_hash(config.dataset);
  manifest.outputs = {out};
  if (!loss_log.empty()) manifest.outputs.push_back(loss_log);
  manifest.wall_time_s = timer.seconds();
  manifest.write(out + ".manifest.json");
  std::cout << "trained " << t.step() << " steps; final total loss "
            << (t.history().empty() ? 0.0 : t.history().back().total) << "\n";
  return harness::kExitOk;
}

int cmd_eval_open(const std::string& ckpt_path, const std::string& data, const std::string& out) {
  Timer timer;
  trainer::Checkpoint ckpt = trainer::Checkpoint::load(ckpt_path);
  std::vector<world::Episode> episodes = world::load_dataset(data);
  model::Model m = ckpt.make_model();
  metrics::OpenLoopReport report =
      trainer::evaluate_open_loop(m, episodes, {ckpt.config.lambda_futbev, ckpt.config.lambda_curbev});
  std::ofstream(out) << report.to_json() << "\n";
  std::cout << report.to_table();

  harness::RunManifest manifest;
  manifest.command = "eval-open";
  manifest.config_hash = ckpt.config.hash();
  manifest.dataset_hash = world::dataset_hash(data);
  manifest.outputs = {out};
  manifest.wall_time_s = timer.seconds();
  manifest.write(out + ".manifest.json");
  return harness::kExitOk;
}

int cmd_eval_closed(const std::string& ckpt_path, std::uint64_t suite_seed, const std::string& out,
                    const std::string& trace_dir) {
  Timer timer;
  trainer::Checkpoint ckpt = trainer::Checkpoint::load(ckpt_path);
  model::Model m = ckpt.make_model();

  closedloop::RolloutConfig config;
  config.grid = ckpt.config.grid;
  config.suite = closedloop::default_suite(suite_seed);
  auto planner = [&m](const world::SemanticRaster& raster, world::Command cmd, const world::EgoState&) {
    return metrics::Trajectory(cfc::infer(m, raster, cmd));
  };
  closedloop::ClosedLoopReport report = closedloop::rollout(planner, config);
  std::ofstream(out) << report.to_json() << "\n";
  if (!trace_dir.empty()) {
    fs::create_directories(trace_dir);
    for (std::size_t i = 0; i < report.runs.size(); ++i)
      closedloop::write_trace_csv(report.runs[i], trace_dir + "/run_" + std::to_string(i) + ".csv");
  }
  std::cout << "success rate " << report.success_rate << "%, completion " << report.route_completion
            << ", score " << report.score << "\n";

  harness::RunManifest manifest;
  manifest.command = "eval-closed";
  manifest.config_hash = ckpt.config.hash();
  manifest.outputs = {out};
  manifest.wall_time_s = timer.seconds();
  manifest.write(out + ".manifest.json");
  return harness::kExitOk;
}

int cmd_ablate(const std::string& grid_path, const std::string& train_dir, const std::string& eval_dir,
               const std::string& out, int workers) {
  Timer timer;
  json spec = json::parse(read_file(grid_path), nullptr, false);
  if (spec.is_discarded()) throw std::runtime_error("ablation grid is not valid JSON");
  json base = spec.value("base", json::object());
  std::vector<trainer::AblationArm> arms;
  for (const json& arm : spec.at("arms")) {
    json merged = base;
    std::string name = arm.at("name").get<std::string>();
    for (const auto& [k, v] : arm.items())
      if (k != "name") merged[k] = v;
    trainer::TrainConfig config = trainer::TrainConfig::from_json(merged.dump());
    if (auto s = env_seed()) config.seed = *s;
    arms.push_back({name, config});
  }
  std::vector<world::Episode> train_set = world::load_dataset(train_dir);
  std::vector<world::Episode> eval_set = world::load_dataset(eval_dir);
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  std::vector<trainer::ArmResult> results = trainer::run_ablation(arms, train_set, eval_set, workers);
  std::ofstream(out) << trainer::ablation_to_json(results) << "\n";
  std::cout << trainer::ablation_to_table(results);

  harness::RunManifest manifest;
  manifest.command = "ablate";
  manifest.config_hash = harness::fnv1a(spec.dump());
  manifest.dataset_hash = world::dataset_hash(train_dir);
  manifest.outputs = {out};
  manifest.wall_time_s = timer.seconds();
  manifest.write(out + ".manifest.json");
  return harness::kExitOk;
}

int cmd_plot(const std::string& loss_csv, const std::string& report_json, const std::string& trace_csv,
             const std::string& out) {
  Timer timer;
  std::vector<std::string> outputs;
  if (!loss_csv.empty()) {
    std::ifstream in(loss_csv);
    if (!in) throw std::runtime_error("missing file: " + loss_csv);
    std::string line;
    std::getline(in, line);  // header
    harness::Series total{"total", {}, {}}, traj{"traj", {}, {}}, fut{"futbev", {}, {}}, cur{"curbev", {}, {}};
    while (std::getline(in, line)) {
      double step, a, b, c, d;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &step, &a, &b, &c, &d) != 5) continue;
      traj.x.push_back(step);
      traj.y.push_back(a);
      fut.x.push_back(step);
      fut.y.push_back(b);
      cur.x.push_back(step);
      cur.y.push_back(c);
      total.x.push_back(step);
      total.y.push_back(d);
    }
    harness::write_line_chart_svg(out + "/loss_curve.svg", {total, traj, fut, cur}, "training loss");
    fs::copy_file(loss_csv, out + "/loss_curve.csv", fs::copy_options::overwrite_existing);
    outputs.push_back(out + "/loss_curve.svg");
  }
  if (!report_json.empty()) {
    json report = json::parse(read_file(report_json));
    std::vector<std::pair<std::string, double>> bars;
    for (const char* proto : {"final_max", "average"})
      if (report.contains(proto))
        bars.emplace_back(std::string(proto) + " L2", report[proto]["l2"]["avg"].get<double>());
    if (!bars.empty()) {
      harness::write_bar_chart_svg(out + "/metrics.svg", bars, "open-loop avg L2 (m)");
      outputs.push_back(out + "/metrics.svg");
    }
  }
  if (!trace_csv.empty()) {
    std::ifstream in(trace_csv);
    if (!in) throw std::runtime_error("missing file: " + trace_csv);
    std::string line;
    std::getline(in, line);
    harness::Series driven{"driven", {}, {}};
    std::ofstream data(out + "/trajectory.csv");
    data << "x,y\n";
    while (std::getline(in, line)) {
      double step, x, y;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &step, &x, &y) != 3) continue;
      driven.x.push_back(x);
      driven.y.push_back(y);
      data << x << "," << y << "\n";
    }
    harness::write_line_chart_svg(out + "/trajectory.svg", {driven}, "driven trajectory (world frame)");
    outputs.push_back(out + "/trajectory.svg");
  }

  harness::RunManifest manifest;
  manifest.command = "plot";
  manifest.outputs = outputs;
  manifest.wall_time_s = timer.seconds();
  manifest.write(out + "/plot.manifest.json");
  return harness::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"echo-cycle BEV planner toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  int episodes = 64;
  double train_frac = 0.75;
  std::string out, config_path, loss_log, ckpt_path, data, trace_dir, grid_path, train_dir, eval_dir;
  std::string loss_csv, report_json, trace_csv;
  std::uint64_t suite_seed = 1000;
  int workers = 0;
  world::GridSpec grid;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic episode dataset");
  gen->add_option("--seed", seed);
  gen->add_option("--episodes", episodes);
  gen->add_option("--train-frac", train_frac);
  gen->add_option("--out", out)->required();

  CLI::App* train = app.add_subcommand("train", "train a planner from a JSON config");
  train->add_option("--config", config_path)->required();
  train->add_option("--out", out)->required();
  train->add_option("--loss-log", loss_log);

  CLI::App* eopen = app.add_subcommand("eval-open", "open-loop metrics for a checkpoint");
  eopen->add_option("--checkpoint", ckpt_path)->required();
  eopen->add_option("--data", data)->required();
  eopen->add_option("--out", out)->required();

  CLI::App* eclosed = app.add_subcommand("eval-closed", "closed-loop rollout for a checkpoint");
  eclosed->add_option("--checkpoint", ckpt_path)->required();
  eclosed->add_option("--suite-seed", suite_seed);
  eclosed->add_option("--out", out)->required();
  eclosed->add_option("--trace-dir", trace_dir);

  CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate an ablation grid");
  ablate->add_option("--grid", grid_path)->required();
  ablate->add_option("--train", train_dir)->required();
  ablate->add_option("--eval", eval_dir)->required();
  ablate->add_option("--out", out)->required();
  ablate->add_option("--workers", workers);

  CLI::App* plot = app.add_subcommand("plot", "emit SVG charts from logs and reports");
  plot->add_option("--loss", loss_csv);
  plot->add_option("--report", report_json);
  plot->add_option("--trace", trace_csv);
  plot->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return harness::kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(seed, episodes, train_frac, out, grid);
    if (train->parsed()) return cmd_train(config_path, out, loss_log);
    if (eopen->parsed()) return cmd_eval_open(ckpt_path, data, out);
    if (eclosed->parsed()) return cmd_eval_closed(ckpt_path, suite_seed, out, trace_dir);
    if (ablate->parsed()) return cmd_ablate(grid_path, train_dir, eval_dir, out, workers);
    if (plot->parsed()) {
      std::filesystem::create_directories(out);
      return cmd_plot(loss_csv, report_json, trace_csv, out);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return harness::kExitValidation;
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    return msg.find("non-finite") != std::string::npos ? harness::kExitNumeric : harness::kExitValidation;
  }
  return harness::kExitUsage;
}
