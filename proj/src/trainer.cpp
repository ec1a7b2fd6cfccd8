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

#include "slimtrain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "slimtrain/checkpoint.hpp"
#include "slimtrain/network.hpp"

namespace slimtrain {
namespace {

template <typename T>
std::int64_t activation_elements_per_sample(const ModelGraph<T>& g) {
  std::int64_t total = 0;
  for (const auto& s : infer_activation_shapes(g)) total += s[0] * s[1] * s[2];
  return total;
}

template <typename T>
void sgd_update(ModelGraph<T>& g, const std::vector<ParamGrads<T>>& grads, double lr, double coef) {
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    auto& l = g.layers[i];
    const auto& pg = grads[i];
    if (l.has_weights()) {
      sgd_momentum_step(l.weight.data(), std::as_const(pg.weight).data(), l.weight_momentum.data(), lr, coef);
      if (!l.bias.empty()) {
        sgd_momentum_step(l.bias.data(), std::as_const(pg.bias).data(), l.bias_momentum.data(), lr, coef);
      }
    } else if (l.kind == LayerKind::kBatchNorm) {
      sgd_momentum_step(l.bn.gamma.data(), std::as_const(pg.gamma).data(), l.gamma_momentum.data(), lr, coef);
      sgd_momentum_step(l.bn.beta.data(), std::as_const(pg.beta).data(), l.beta_momentum.data(), lr, coef);
    }
  }
}

double zeroed_fraction(const SparsityHistory& h, double threshold) {
  if (h.records.empty()) return 0.0;
  std::int64_t zeroed = 0, total = 0;
  for (const auto& [id, values] : h.records.back().max_abs) {
    for (double v : values) zeroed += v < threshold ? 1 : 0;
    total += static_cast<std::int64_t>(values.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(zeroed) / static_cast<double>(total);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void HyperParams::validate() const {
  auto fail = [](const std::string& field, const std::string& rule) {
    throw ConfigError("invalid " + field + ": " + rule);
  };
  if (!(target_lasso_ratio >= 0.0 && target_lasso_ratio < 1.0)) fail("target_lasso_ratio", "must lie in [0, 1)");
  if (!(threshold > 0.0)) fail("threshold", "must be positive");
  if (reconfiguration_interval < 1) fail("reconfiguration_interval", "must be at least 1");
  if (batch < 1) fail("batch", "must be at least 1");
  if (!(lr > 0.0)) fail("lr", "must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
  if (epochs < 0) fail("epochs", "must be non-negative");
  if (memory_budget < 0) fail("memory_budget", "must be non-negative");
  if (batch_granularity < 1) fail("batch_granularity", "must be at least 1");
  for (double m : lr_milestones) {
    if (!(m >= 0.0 && m <= 1.0)) fail("lr_milestones", "fractions must lie in [0, 1]");
  }
  if (!(lr_decay > 0.0)) fail("lr_decay", "must be positive");
  if (devices < 1) fail("devices", "must be at least 1");
  if (eval_batch < 1) fail("eval_batch", "must be at least 1");
}

template <typename T>
std::int64_t estimate_iteration_memory(const ModelGraph<T>& g, int batch, int bytes_per_elem) {
  return static_cast<std::int64_t>(batch) * activation_elements_per_sample(g) * bytes_per_elem +
         3 * g.parameter_count() * bytes_per_elem;
}

template <typename T>
BatchUpdate adjust_mini_batch(const ModelGraph<T>& g, int batch, double lr, const HyperParams& hp) {
  BatchUpdate unchanged{batch, lr};
  if (hp.memory_budget <= 0) return unchanged;
  const std::int64_t bpe = sizeof(T);
  const std::int64_t per_sample = activation_elements_per_sample(g) * bpe;
  const std::int64_t fixed = 3 * g.parameter_count() * bpe;
  if (per_sample <= 0 || hp.memory_budget < fixed) return unchanged;
  const std::int64_t max_batch = (hp.memory_budget - fixed) / per_sample;
  const std::int64_t candidate = max_batch / hp.batch_granularity * hp.batch_granularity;
  if (candidate <= batch) return unchanged;
  const int new_batch = static_cast<int>(candidate);
  return {new_batch, lr * static_cast<double>(new_batch) / static_cast<double>(batch)};
}

double lr_schedule(int epoch, const HyperParams& hp, double current_lr) {
  double lr = current_lr;
  for (double f : hp.lr_milestones) {
    const int milestone = static_cast<int>(std::floor(f * hp.epochs));
    if (milestone > 0 && epoch == milestone) lr *= hp.lr_decay;
  }
  return lr;
}

template <typename T>
double evaluate_accuracy(const ModelGraph<T>& g, const DatasetHandle& data, int eval_batch) {
  if (data.count() == 0) return 0.0;
  std::int64_t correct = 0;
  std::vector<int> idx;
  for (std::int64_t begin = 0; begin < data.count(); begin += eval_batch) {
    const std::int64_t end = std::min<std::int64_t>(begin + eval_batch, data.count());
    idx.resize(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), static_cast<int>(begin));
    const auto logits = forward_inference(g, gather_images<T>(data, idx));
    const std::int64_t classes = logits.dim(1);
    for (std::int64_t i = 0; i < end - begin; ++i) {
      const T* row = logits.raw() + i * classes;
      const auto pred = std::max_element(row, row + classes) - row;
      correct += pred == data.labels[static_cast<std::size_t>(begin + i)] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.count());
}

template <typename T>
TrainingState<T> train(ModelGraph<T> model, const HyperParams& hp, const DatasetHandle& train_set,
                       const DatasetHandle& val_set, const TrainHooks<T>& hooks) {
  hp.validate();
  if (train_set.count() == 0) throw InputError("training set is empty");
  if (train_set.image_shape() != model.input_shape ||
      (val_set.count() > 0 && val_set.image_shape() != model.input_shape)) {
    throw InputError("dataset image shape does not match the model input");
  }
  if (train_set.classes != model.num_classes) throw InputError("dataset class count does not match the model");
  constexpr int kBytes = sizeof(T);
  if (hp.memory_budget > 0 && estimate_iteration_memory(model, hp.batch, kBytes) > hp.memory_budget) {
    throw ConfigError("invalid memory_budget: the dense model needs " +
                      std::to_string(estimate_iteration_memory(model, hp.batch, kBytes)) +
                      " bytes at the base mini-batch");
  }

  TrainingState<T> state;
  state.graph = std::move(model);
  state.initial_architecture = architecture_to_json(state.graph);
  state.batch = hp.batch;
  state.lr = hp.lr;
  state.history = make_sparsity_history(state.graph);
  state.trajectory.architecture = state.initial_architecture;
  state.trajectory.interval = hp.reconfiguration_interval;
  state.trajectory.samples_per_epoch = train_set.count();
  const ModelGraph<T> initial = state.graph;

  try {
    std::mt19937_64 rng(hp.seed);
    std::vector<int> order(static_cast<std::size_t>(train_set.count()));
    std::iota(order.begin(), order.end(), 0);
    LassoGroups groups = build_lasso_groups(state.graph);

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
      state.lr = lr_schedule(epoch, hp, state.lr);
      std::shuffle(order.begin(), order.end(), rng);
      EpochMetrics m;
      m.epoch = epoch;
      m.batch = state.batch;
      m.lr = state.lr;
      const auto cost = count_flops(state.graph, state.batch, kBytes);
      m.flops_per_iter = cost.training_flops;
      m.params = state.graph.parameter_count();
      m.mem_estimate_bytes = estimate_iteration_memory(state.graph, state.batch, kBytes);
      m.comm_bytes_per_epoch = allreduce_cost(m.params, hp.devices,
                                              updates_per_epoch(train_set.count(), state.batch), kBytes);

      double loss_sum = 0.0, lasso_acc = 0.0;
      std::int64_t iterations = 0;
      for (std::int64_t begin = 0; begin < train_set.count(); begin += state.batch) {
        const std::int64_t end = std::min<std::int64_t>(begin + state.batch, train_set.count());
        const std::span<const int> idx(order.data() + begin, static_cast<std::size_t>(end - begin));
        std::vector<int> labels;
        labels.reserve(idx.size());
        for (int i : idx) labels.push_back(train_set.labels[static_cast<std::size_t>(i)]);

        ForwardCache<T> cache;
        const auto logits = forward_train(state.graph, gather_images<T>(train_set, idx), cache);
        auto loss = softmax_cross_entropy(logits, labels);
        const double raw = group_lasso_raw_sum(state.graph, groups);
        if (!state.lambda_set) {
          state.lambda = hp.target_lasso_ratio > 0.0
                             ? compute_penalty_coefficient(loss.loss, raw, hp.target_lasso_ratio)
                             : 0.0;
          state.lambda_set = true;
        }
        groups.lambda = state.lambda;
        auto grads = backward(state.graph, cache, loss.grad_logits);
        add_group_lasso_subgradient(state.graph, groups, std::span<ParamGrads<T>>(grads));
        sgd_update(state.graph, grads, state.lr, hp.momentum);

        loss_sum += loss.loss * static_cast<double>(idx.size());
        lasso_acc += raw;
        ++iterations;
        ++state.iteration;
      }
      m.iter_count = state.iteration;
      m.class_loss = loss_sum / static_cast<double>(train_set.count());
      m.lasso_sum = lasso_acc / static_cast<double>(iterations);
      m.total_loss = m.class_loss + state.lambda * m.lasso_sum;
      m.val_acc = evaluate_accuracy(state.graph, val_set, hp.eval_batch);

      record_sparsity(state.history, state.graph, epoch);
      m.zeroed_channel_frac = zeroed_fraction(state.history, hp.threshold);
      const auto masks = detect_zeroed_channels(state.graph, hp.threshold);
      state.trajectory.epochs.push_back({epoch, masks_in_original_coordinates(masks, state.graph, initial)});
      state.metrics.push_back(m);
      state.epoch = epoch + 1;

      if ((epoch + 1) % hp.reconfiguration_interval == 0) {
        zero_flagged_channels(state.graph, masks);
        const auto plan = plan_reconfiguration(masks, state.graph);
        state.graph = apply_reconfiguration(state.graph, plan);
        groups = build_lasso_groups(state.graph, state.lambda);
        const auto update = adjust_mini_batch(state.graph, state.batch, state.lr, hp);
        state.batch = update.batch;
        state.lr = update.lr;
        if (hooks.on_reconfigure) hooks.on_reconfigure(plan, state);
      }
      if (hooks.on_epoch) hooks.on_epoch(m, state);
    }
  } catch (const Error&) {
    if (hooks.on_failure) hooks.on_failure(state);
    throw;
  }
  return state;
}

const char* const kMetricsCsvHeader =
    "epoch,iter_count,batch,lr,class_loss,lasso_sum,total_loss,val_acc,flops_per_iter,params,"
    "mem_estimate_bytes,comm_bytes_per_epoch,zeroed_channel_frac";

void write_metrics_header(std::ostream& out) { out << kMetricsCsvHeader << '\n'; }

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.epoch << ',' << m.iter_count << ',' << m.batch << ',' << format_double(m.lr) << ','
      << format_double(m.class_loss) << ',' << format_double(m.lasso_sum) << ','
      << format_double(m.total_loss) << ',' << format_double(m.val_acc) << ',' << m.flops_per_iter << ','
      << m.params << ',' << m.mem_estimate_bytes << ',' << format_double(m.comm_bytes_per_epoch) << ','
      << format_double(m.zeroed_channel_frac) << '\n';
}

std::vector<EpochMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) throw InputError("metrics file has an unexpected header");
  std::vector<EpochMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 13) throw InputError("metrics row has " + std::to_string(cells.size()) + " fields");
    EpochMetrics m;
    m.epoch = std::stoi(cells[0]);
    m.iter_count = std::stoll(cells[1]);
    m.batch = std::stoi(cells[2]);
    m.lr = std::stod(cells[3]);
    m.class_loss = std::stod(cells[4]);
    m.lasso_sum = std::stod(cells[5]);
    m.total_loss = std::stod(cells[6]);
    m.val_acc = std::stod(cells[7]);
    m.flops_per_iter = std::stoll(cells[8]);
    m.params = std::stoll(cells[9]);
    m.mem_estimate_bytes = std::stoll(cells[10]);
    m.comm_bytes_per_epoch = std::stod(cells[11]);
    m.zeroed_channel_frac = std::stod(cells[12]);
    rows.push_back(m);
  }
  return rows;
}

#define SLIMTRAIN_INSTANTIATE_TRAINER(T)                                                          \
  template TrainingState<T> train<T>(ModelGraph<T>, const HyperParams&, const DatasetHandle&,     \
                                     const DatasetHandle&, const TrainHooks<T>&);                 \
  template std::int64_t estimate_iteration_memory<T>(const ModelGraph<T>&, int, int);             \
  template BatchUpdate adjust_mini_batch<T>(const ModelGraph<T>&, int, double, const HyperParams&); \
  template double evaluate_accuracy<T>(const ModelGraph<T>&, const DatasetHandle&, int);

SLIMTRAIN_INSTANTIATE_TRAINER(float)
SLIMTRAIN_INSTANTIATE_TRAINER(double)

#undef SLIMTRAIN_INSTANTIATE_TRAINER

}  // namespace slimtrain
