// Copyright 2026 The slimtrain Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// slimtrain command line: train, cost, compare, report, validate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "slimtrain/allocator.hpp"
#include "slimtrain/checkpoint.hpp"
#include "slimtrain/config.hpp"
#include "slimtrain/cost.hpp"
#include "slimtrain/prune.hpp"
#include "slimtrain/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw slimtrain::InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw slimtrain::FormatError(path.string() + " is not valid JSON", e.byte);
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw slimtrain::InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string epoch_tag(int epoch) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", epoch);
  return buf;
}

template <typename T>
int run_train(const slimtrain::RunConfig& cfg, const fs::path& out_dir) {
  using namespace slimtrain;
  fs::create_directories(out_dir);
  write_json(out_dir / "config.json", run_config_to_json(cfg));
  auto [train_set, val_set] = load_datasets(cfg.dataset);
  auto model = build_model<T>(cfg.model, train_set.image_shape(), train_set.classes, cfg.hp.seed);
  const auto dense = count_flops(model, 1);

  std::ofstream metrics(out_dir / "metrics.csv");
  if (!metrics) throw InputError("cannot write " + (out_dir / "metrics.csv").string());
  write_metrics_header(metrics);
  metrics.flush();

  auto checkpoint_state = [](const TrainingState<T>& s) {
    return CheckpointState{s.epoch, s.iteration, s.batch, s.lr, s.lambda};
  };
  TrainHooks<T> hooks;
  hooks.on_epoch = [&](const EpochMetrics& m, const TrainingState<T>& s) {
    write_metrics_row(metrics, m);
    metrics.flush();
    std::cerr << "epoch " << m.epoch << " loss " << m.class_loss << " val_acc " << m.val_acc
              << " flops/iter " << m.flops_per_iter << " batch " << s.batch << '\n';
  };
  hooks.on_reconfigure = [&](const PrunePlan& plan, const TrainingState<T>& s) {
    const std::string tag = epoch_tag(s.epoch);
    write_json(out_dir / ("plan_epoch" + tag + ".json"), plan_to_json(plan));
    save_checkpoint(s.graph, checkpoint_state(s), out_dir / ("checkpoint_epoch" + tag + ".ptck"));
  };
  hooks.on_failure = [&](const TrainingState<T>& s) {
    save_checkpoint(s.graph, checkpoint_state(s), out_dir / "failed.ptck");
    write_json(out_dir / "history.json", sparsity_history_to_json(s.history));
  };

  const auto state = train(std::move(model), cfg.hp, train_set, val_set, hooks);
  save_checkpoint(state.graph, checkpoint_state(state), out_dir / "final.ptck");
  write_json(out_dir / "trajectory.json", trajectory_to_json(state.trajectory));
  write_json(out_dir / "history.json", sparsity_history_to_json(state.history));
  const auto final_cost = count_flops(state.graph, 1);
  write_json(out_dir / "summary.json",
             {{"lambda", state.lambda},
              {"epochs", state.epoch},
              {"iterations", state.iteration},
              {"final_batch", state.batch},
              {"final_lr", state.lr},
              {"final_val_acc", state.metrics.empty() ? 0.0 : state.metrics.back().val_acc},
              {"dense_inference_flops_per_sample", dense.inference_flops},
              {"final_inference_flops_per_sample", final_cost.inference_flops},
              {"dense_params", dense.params},
              {"final_params", final_cost.params}});
  return 0;
}

template <typename T>
json cost_json(const fs::path& checkpoint, int batch, int devices, std::int64_t samples) {
  using namespace slimtrain;
  const auto ck = load_checkpoint<T>(checkpoint);
  auto report = count_flops(ck.graph, batch, static_cast<int>(sizeof(T)));
  with_communication(report, devices, samples);
  json j = cost_report_to_json(report);
  const auto masks = detect_zeroed_channels(ck.graph, kDefaultZeroThreshold);
  for (auto mode : {PlanMode::kUnion, PlanMode::kGating}) {
    const auto planned = count_flops(ck.graph, plan_reconfiguration(masks, ck.graph, mode), batch,
                                     static_cast<int>(sizeof(T)));
    j["planned"][plan_mode_name(mode)] = {{"mode", plan_mode_name(mode)},
                                          {"inference_flops", planned.inference_flops},
                                          {"training_flops", planned.training_flops},
                                          {"params", planned.params}};
  }
  return j;
}

template <typename T>
json validate_json(const fs::path& checkpoint) {
  const auto ck = slimtrain::load_checkpoint<T>(checkpoint);
  json problems = json::array();
  for (const auto& v : slimtrain::validate_graph(ck.graph)) {
    problems.push_back({{"message", v.message}, {"layers", v.layer_ids}});
  }
  return problems;
}

template <typename T>
json density_json(const fs::path& checkpoint, double threshold) {
  const auto ck = slimtrain::load_checkpoint<T>(checkpoint);
  std::int64_t total = 0, nonzero = 0;
  for (const auto& l : ck.graph.layers) {
    if (!l.has_weights()) continue;
    for (T w : l.weight.data()) {
      ++total;
      nonzero += std::abs(static_cast<double>(w)) >= threshold ? 1 : 0;
    }
  }
  return {{"weights", total},
          {"nonzero_weights", nonzero},
          {"weight_density", total == 0 ? 0.0 : static_cast<double>(nonzero) / static_cast<double>(total)},
          {"params", ck.graph.parameter_count()}};
}

}  // namespace

int main(int argc, char** argv) {
  slimtrain::tune_allocator();
  CLI::App app{"Structured-sparsity training with periodic network reconfiguration"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "Train with a JSON config");
  std::string config_path, out_dir;
  train_cmd->add_option("--config", config_path, "Run configuration (JSON)")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* cost_cmd = app.add_subcommand("cost", "Print the cost report of a checkpoint");
  std::string checkpoint;
  int batch = 128, devices = 4;
  std::int64_t samples = 50000;
  cost_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  cost_cmd->add_option("--batch", batch, "Mini-batch size")->check(CLI::PositiveNumber);
  cost_cmd->add_option("--devices", devices, "Data-parallel devices for the allreduce model")->check(CLI::PositiveNumber);
  cost_cmd->add_option("--samples", samples, "Samples per epoch")->check(CLI::PositiveNumber);

  auto* compare_cmd = app.add_subcommand("compare", "One-time versus periodic reconfiguration");
  std::string trajectory_path;
  int interval = 10;
  bool compare_as_json = false;
  compare_cmd->add_option("--trajectory", trajectory_path, "Trajectory JSON from a training run")->required();
  compare_cmd->add_option("--interval", interval, "Reconfiguration interval in epochs")->check(CLI::PositiveNumber);
  compare_cmd->add_flag("--json", compare_as_json, "Print JSON instead of a table");

  auto* report_cmd = app.add_subcommand("report", "Channel revival and weight density");
  std::string history_path, report_checkpoint;
  double threshold = slimtrain::kDefaultZeroThreshold;
  report_cmd->add_option("--history", history_path, "Sparsity history JSON")->required();
  report_cmd->add_option("--checkpoint", report_checkpoint, "Checkpoint for the density report");
  report_cmd->add_option("--threshold", threshold, "Zero threshold")->check(CLI::PositiveNumber);

  auto* validate_cmd = app.add_subcommand("validate", "Check the graph stored in a checkpoint");
  std::string validate_checkpoint;
  validate_cmd->add_option("--checkpoint", validate_checkpoint, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, std::cerr, std::cerr);
  }

  try {
    if (*train_cmd) {
      const auto cfg = slimtrain::load_run_config(config_path);
      return cfg.dtype == "float64" ? run_train<double>(cfg, out_dir) : run_train<float>(cfg, out_dir);
    }
    if (*cost_cmd) {
      const bool f64 = slimtrain::peek_checkpoint_dtype(checkpoint) == "float64";
      std::cout << (f64 ? cost_json<double>(checkpoint, batch, devices, samples)
                        : cost_json<float>(checkpoint, batch, devices, samples))
                       .dump(2)
                << '\n';
      return 0;
    }
    if (*compare_cmd) {
      const auto table = slimtrain::compare_one_time_vs_periodic(
          slimtrain::trajectory_from_json(read_json(trajectory_path)), interval);
      if (compare_as_json) {
        std::cout << slimtrain::compare_table_to_json(table).dump(2) << '\n';
        return 0;
      }
      std::printf("periodic total training FLOPs: %.6e (dense %.6e)\n", table.periodic_flops, table.dense_flops);
      std::printf("%8s %20s %12s\n", "epoch", "one_time_flops", "vs_periodic");
      for (const auto& r : table.rows) std::printf("%8d %20.6e %12.4f\n", r.epoch, r.one_time_flops, r.ratio);
      return 0;
    }
    if (*report_cmd) {
      const auto history = slimtrain::sparsity_history_from_json(read_json(history_path));
      json out = {{"revival", slimtrain::revival_report_to_json(slimtrain::revival_report(history, threshold))}};
      if (!report_checkpoint.empty()) {
        const bool f64 = slimtrain::peek_checkpoint_dtype(report_checkpoint) == "float64";
        out["density"] = f64 ? density_json<double>(report_checkpoint, threshold)
                             : density_json<float>(report_checkpoint, threshold);
      }
      std::cout << out.dump(2) << '\n';
      return 0;
    }
    if (*validate_cmd) {
      const bool f64 = slimtrain::peek_checkpoint_dtype(validate_checkpoint) == "float64";
      const json problems = f64 ? validate_json<double>(validate_checkpoint) : validate_json<float>(validate_checkpoint);
      if (problems.empty()) {
        std::cout << "ok\n";
        return 0;
      }
      for (const auto& p : problems) std::cerr << "invalid: " << p["message"].get<std::string>() << '\n';
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
