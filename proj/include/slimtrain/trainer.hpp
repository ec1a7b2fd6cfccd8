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

// Sparsifying training loop with periodic reconfiguration.
//
// Per iteration: forward, cross-entropy, group-lasso subgradient added to the
// classification gradient, SGD with momentum. The lasso coefficient is solved
// once from the first mini-batch. After every `reconfiguration_interval`
// epochs the model is zeroed, planned and rebuilt smaller, and the mini-batch
// may grow into the freed memory with the learning rate scaled alongside.

#ifndef SLIMTRAIN_TRAINER_HPP_
#define SLIMTRAIN_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "slimtrain/cost.hpp"
#include "slimtrain/dataset.hpp"
#include "slimtrain/lasso.hpp"
#include "slimtrain/model_graph.hpp"
#include "slimtrain/prune.hpp"

namespace slimtrain {

struct HyperParams {
  double target_lasso_ratio = 0.2;
  double threshold = kDefaultZeroThreshold;
  int reconfiguration_interval = 10;
  int batch = 128;
  double lr = 0.1;
  double momentum = 0.9;
  int epochs = 1;
  std::int64_t memory_budget = 0;  // bytes; 0 keeps the mini-batch fixed
  int batch_granularity = 32;
  std::vector<double> lr_milestones{0.5, 0.75};  // fractions of `epochs`
  double lr_decay = 0.1;
  int devices = 4;  // for the communication estimate only
  int eval_batch = 250;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  std::int64_t iter_count = 0;  // iterations completed so far
  int batch = 0;
  double lr = 0.0;
  double class_loss = 0.0;  // mean over the epoch's samples
  double lasso_sum = 0.0;   // mean raw group-norm sum over the epoch's iterations
  double total_loss = 0.0;  // class_loss + lambda * lasso_sum
  double val_acc = 0.0;
  std::int64_t flops_per_iter = 0;  // training FLOPs at `batch`
  std::int64_t params = 0;
  std::int64_t mem_estimate_bytes = 0;
  double comm_bytes_per_epoch = 0.0;
  double zeroed_channel_frac = 0.0;
};

template <typename T>
struct TrainingState {
  ModelGraph<T> graph;
  nlohmann::json initial_architecture;
  double lambda = 0.0;
  bool lambda_set = false;
  int epoch = 0;  // epochs completed
  std::int64_t iteration = 0;
  int batch = 0;
  double lr = 0.0;
  std::vector<EpochMetrics> metrics;
  SparsityHistory history;
  Trajectory trajectory;
};

template <typename T>
struct TrainHooks {
  std::function<void(const EpochMetrics&, const TrainingState<T>&)> on_epoch;
  std::function<void(const PrunePlan&, const TrainingState<T>&)> on_reconfigure;
  // Called with the state as it was when an error escaped; the error is rethrown.
  std::function<void(const TrainingState<T>&)> on_failure;
};

template <typename T>
TrainingState<T> train(ModelGraph<T> model, const HyperParams& hp, const DatasetHandle& train_set,
                       const DatasetHandle& val_set, const TrainHooks<T>& hooks = {});

// batch * (sum of per-sample output activation elements) * bytes
//   + 3 * parameters * bytes (weights, gradients, momentum).
template <typename T>
std::int64_t estimate_iteration_memory(const ModelGraph<T>& g, int batch, int bytes_per_elem);

struct BatchUpdate {
  int batch = 0;
  double lr = 0.0;
};

// Largest multiple of the granularity >= batch whose estimate fits the budget;
// the learning rate scales by the same ratio. Never shrinks the batch.
template <typename T>
BatchUpdate adjust_mini_batch(const ModelGraph<T>& g, int batch, double lr, const HyperParams& hp);

// Learning rate for `epoch` given the rate used in the previous epoch.
double lr_schedule(int epoch, const HyperParams& hp, double current_lr);

// Accuracy with running statistics.
template <typename T>
double evaluate_accuracy(const ModelGraph<T>& g, const DatasetHandle& data, int eval_batch);

extern const char* const kMetricsCsvHeader;
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);
std::vector<EpochMetrics> read_metrics_csv(std::istream& in);

}  // namespace slimtrain

#endif  // SLIMTRAIN_TRAINER_HPP_
