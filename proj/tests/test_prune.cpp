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

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "prune_fixtures.hpp"
#include "slimtrain/checkpoint.hpp"
#include "slimtrain/cost.hpp"
#include "slimtrain/errors.hpp"
#include "slimtrain/prune.hpp"

namespace slimtrain {
namespace {

const ChannelMask& mask_for(const std::vector<ChannelMask>& masks, int id, MaskDirection dir) {
  for (const auto& m : masks)
    if (m.layer_id == id && m.direction == dir) return m;
  throw std::out_of_range("no mask");
}

void kill_output(ModelGraph<double>& g, int id, int ch) {
  auto& w = g.layer(id).weight;
  const auto inner = w.size() / w.dim(0);
  std::fill(w.raw() + ch * inner, w.raw() + (ch + 1) * inner, 0.0);
}

void kill_input(ModelGraph<double>& g, int id, int ch) {
  auto& w = g.layer(id).weight;
  const auto k_count = w.dim(0), c_count = w.dim(1), inner = w.size() / (k_count * c_count);
  for (std::int64_t k = 0; k < k_count; ++k)
    std::fill(w.raw() + (k * c_count + ch) * inner, w.raw() + (k * c_count + ch + 1) * inner, 0.0);
}

ModelGraph<double> small_vgg() {
  const int widths[] = {4, 4};
  auto g = build_toy_vgg<double>(widths, {2, 6, 6}, 3, 7);
  std::mt19937_64 rng(1);
  fixtures::randomize_batchnorm(g, rng);
  return g;
}

ModelGraph<double> one_stage_resnet(int blocks, int width) {
  const StageConfig stages[] = {{blocks, width}};
  auto g = build_toy_resnet<double>(stages, {2, 6, 6}, 3, 5);
  std::mt19937_64 rng(2);
  fixtures::randomize_batchnorm(g, rng);
  return g;
}

TEST(Detect, ThresholdIsStrict) {
  auto g = small_vgg();
  const int conv = weighted_layer_ids(g)[0];
  kill_output(g, conv, 1);
  g.layer(conv).weight[2 * 18] = 1e-4;  // channel 2 entirely at the threshold
  for (std::int64_t i = 1; i < 18; ++i) g.layer(conv).weight[2 * 18 + i] = 0.0;
  const auto masks = detect_zeroed_channels(g, kDefaultZeroThreshold);
  const auto& out = mask_for(masks, conv, MaskDirection::kOutput).zeroed;
  EXPECT_EQ(out, (std::vector<bool>{false, true, false, false}));
  // The first conv reads the image; it has no input-side mask. The head has no output-side mask.
  EXPECT_THROW(mask_for(masks, conv, MaskDirection::kInput), std::out_of_range);
  EXPECT_THROW(mask_for(masks, g.head_id, MaskDirection::kOutput), std::out_of_range);
}

TEST(Detect, OptionallyRequiresBatchNormParameters) {
  auto g = small_vgg();
  const int conv = weighted_layer_ids(g)[0];
  kill_output(g, conv, 0);
  EXPECT_TRUE(mask_for(detect_zeroed_channels(g, 1e-4), conv, MaskDirection::kOutput).zeroed[0]);
  EXPECT_FALSE(mask_for(detect_zeroed_channels(g, 1e-4, {true}), conv, MaskDirection::kOutput).zeroed[0]);
  zero_flagged_channels(g, detect_zeroed_channels(g, 1e-4));
  EXPECT_TRUE(mask_for(detect_zeroed_channels(g, 1e-4, {true}), conv, MaskDirection::kOutput).zeroed[0]);
}

TEST(Zero, ClearsMomentumAndBatchNorm) {
  auto g = small_vgg();
  const int conv = weighted_layer_ids(g)[0];
  for (auto& v : g.layer(conv).weight_momentum.data()) v = 1.0;
  std::vector<ChannelMask> masks{{conv, MaskDirection::kOutput, {false, false, true, false}}};
  zero_flagged_channels(g, masks);
  const auto& l = g.layer(conv);
  for (std::int64_t i = 0; i < 18; ++i) {
    EXPECT_EQ(l.weight[2 * 18 + i], 0.0);
    EXPECT_EQ(l.weight_momentum[2 * 18 + i], 0.0);
    EXPECT_EQ(l.weight_momentum[1 * 18 + i], 1.0);
  }
  const auto* bn = batchnorm_after(g, conv);
  EXPECT_EQ(bn->bn.gamma[2], 0.0);
  EXPECT_EQ(bn->bn.beta[2], 0.0);
  EXPECT_NE(bn->bn.gamma[1], 0.0);
  masks[0].zeroed.pop_back();
  EXPECT_THROW(zero_flagged_channels(g, masks), ConsistencyError);
}

TEST(Boundaries, ResidualNodeJoinsEveryContribution) {
  const auto g = one_stage_resnet(2, 4);
  const auto boundaries = find_channel_boundaries(g);
  const auto node = std::find_if(boundaries.begin(), boundaries.end(), [](const auto& b) { return b.stage_id == 0; });
  ASSERT_NE(node, boundaries.end());
  // stem conv plus the last conv of each path; first conv of each path plus the head
  EXPECT_EQ(node->producers.size(), 3u);
  EXPECT_EQ(node->consumers.size(), 3u);
  EXPECT_TRUE(std::count(node->consumers.begin(), node->consumers.end(), g.head_id));
  const auto interior = std::count_if(boundaries.begin(), boundaries.end(), [](const auto& b) { return b.block_stage == 0; });
  EXPECT_EQ(interior, 2);
  EXPECT_FALSE(boundaries.front().prunable());
  EXPECT_TRUE(boundaries.front().reads_graph_input);
}

TEST(Plan, SequentialRemovalNeedsBothSides) {
  auto g = small_vgg();
  const auto ids = weighted_layer_ids(g);
  kill_output(g, ids[0], 1);
  kill_input(g, ids[1], 1);
  kill_output(g, ids[0], 3);  // consumer still reads channel 3
  const auto masks = detect_zeroed_channels(g, 1e-4);
  zero_flagged_channels(g, masks);
  const auto plan = plan_reconfiguration(masks, g);
  EXPECT_EQ(plan.mode, PlanMode::kSequential);
  const auto* bp = plan.boundary_of_output(ids[0]);
  ASSERT_NE(bp, nullptr);
  EXPECT_EQ(bp->retained, (std::vector<int>{0, 2, 3}));
  const auto pruned = apply_reconfiguration(g, plan);
  EXPECT_EQ(pruned.layer(ids[0]).out_channels, 3);
  EXPECT_EQ(pruned.layer(ids[0]).out_origin, (std::vector<int>{0, 2, 3}));
  EXPECT_EQ(pruned.layer(ids[1]).in_origin, (std::vector<int>{0, 2, 3}));
  std::mt19937_64 rng(3);
  const auto x = oracle::random_tensor<double>({2, 2, 6, 6}, rng);
  const auto a = forward_inference(g, x), b = forward_inference(pruned, x);
  for (std::int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Plan, MinimumOneChannelKeepsStrongest) {
  auto g = small_vgg();
  const auto ids = weighted_layer_ids(g);
  for (int ch = 0; ch < 4; ++ch) kill_input(g, ids[1], ch);
  for (int ch : {0, 2, 3}) kill_output(g, ids[0], ch);
  auto& w = g.layer(ids[0]).weight;
  std::fill(w.raw() + 18, w.raw() + 36, 5e-5);  // channel 1 below threshold but largest
  const auto masks = detect_zeroed_channels(g, 1e-4);
  const auto plan = plan_reconfiguration(masks, g);
  EXPECT_EQ(plan.boundary_of_output(ids[0])->retained, (std::vector<int>{1}));

  auto tie = small_vgg();
  for (int ch = 0; ch < 4; ++ch) {
    kill_input(tie, ids[1], ch);
    kill_output(tie, ids[0], ch);
  }
  const auto tie_plan = plan_reconfiguration(detect_zeroed_channels(tie, 1e-4), tie);
  EXPECT_EQ(tie_plan.boundary_of_output(ids[0])->retained, (std::vector<int>{0}));
}

TEST(Plan, NodeUsesIntersectionOfContributions) {
  auto g = one_stage_resnet(2, 4);
  const auto& stage = g.stages[0];
  const auto boundaries = find_channel_boundaries(g);
  const auto& node = *std::find_if(boundaries.begin(), boundaries.end(), [](const auto& b) { return b.stage_id == 0; });
  // Channel 1 dead everywhere; channel 2 dead everywhere except one producer.
  for (int p : node.producers) {
    kill_output(g, p, 1);
    if (p != stage.blocks[1].path[3]) kill_output(g, p, 2);
  }
  for (int c : node.consumers) {
    kill_input(g, c, 1);
    kill_input(g, c, 2);
  }
  const auto masks = detect_zeroed_channels(g, 1e-4);
  const auto plan = plan_channel_union(masks, g, stage);
  EXPECT_EQ(plan.boundaries.front().boundary.stage_id, 0);
  EXPECT_EQ(plan.boundaries.front().retained, (std::vector<int>{0, 2, 3}));
  EXPECT_TRUE(plan.removed_layers.empty());
}

TEST(Plan, DeadResidualPathIsRemoved) {
  auto g = one_stage_resnet(2, 3);
  const auto block = g.stages[0].blocks[0];
  const auto& first = g.layer(block.path.front());
  const int second_conv = block.path[3];
  ASSERT_EQ(g.layer(second_conv).kind, LayerKind::kConv);
  for (int ch = 0; ch < 3; ++ch) {
    kill_output(g, first.id, ch);
    kill_input(g, second_conv, ch);
    kill_output(g, second_conv, ch);
  }
  const auto masks = detect_zeroed_channels(g, 1e-4);
  zero_flagged_channels(g, masks);
  const auto plan = plan_reconfiguration(masks, g);
  EXPECT_EQ(plan.mode, PlanMode::kUnion);
  for (int id : block.path) EXPECT_TRUE(plan.removes(id));
  EXPECT_TRUE(plan.removes(block.add_id));
  EXPECT_TRUE(plan.removes(block.relu_id));
  const auto pruned = apply_reconfiguration(g, plan);
  EXPECT_EQ(pruned.stages[0].blocks.size(), 1u);
  EXPECT_EQ(pruned.layers.size(), g.layers.size() - block.path.size() - 2);
  EXPECT_EQ(pruned.layer(g.stages[0].blocks[1].add_id).inputs.at(0), g.stages[0].entry_id);
  std::mt19937_64 rng(4);
  const auto x = oracle::random_tensor<double>({2, 2, 6, 6}, rng);
  const auto a = forward_inference(g, x), b = forward_inference(pruned, x);
  for (std::int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Plan, GatingIsCostOnly) {
  auto g = one_stage_resnet(2, 4);
  const auto& stage = g.stages[0];
  kill_output(g, stage.blocks[0].path[3], 2);  // only one contribution is dead
  const auto masks = detect_zeroed_channels(g, 1e-4);
  const auto gating = plan_channel_gating(masks, g, stage);
  ASSERT_FALSE(gating.gating.empty());
  EXPECT_EQ(gating.gating[1].output_scatter, (std::vector<int>{0, 1, 3}));
  EXPECT_THROW(apply_reconfiguration(g, gating), ConsistencyError);
  EXPECT_THROW(plan_reconfiguration(masks, g, PlanMode::kSequential), ConfigError);
  const auto union_cost = count_flops(g, plan_channel_union(masks, g, stage), 1);
  const auto gating_cost = count_flops(g, gating, 1);
  EXPECT_LT(gating_cost.inference_flops, union_cost.inference_flops);
  EXPECT_EQ(union_cost.inference_flops, count_flops(g, 1).inference_flops);
}

TEST(Plan, JsonListsRetainedChannels) {
  auto g = small_vgg();
  const auto ids = weighted_layer_ids(g);
  kill_output(g, ids[0], 0);
  kill_input(g, ids[1], 0);
  const auto j = plan_to_json(plan_reconfiguration(detect_zeroed_channels(g, 1e-4), g));
  EXPECT_EQ(j["mode"], "sequential");
  bool found = false;
  for (const auto& b : j["boundaries"]) {
    if (b["producers"] == nlohmann::json::array({ids[0]})) {
      EXPECT_EQ(b["retained"], nlohmann::json::array({1, 2, 3}));
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(Reconfigure, RandomCasesMatchZeroedModel) {
  std::mt19937_64 rng(99);
  int removals = 0;
  for (int i = 0; i < 20; ++i) {
    const auto g = fixtures::random_model(rng);
    const auto kill = fixtures::random_dead_channels(g, rng);
    const auto r = fixtures::check_reconfiguration(g, kill, rng);
    EXPECT_LE(r.max_abs_diff, 1e-9) << "case " << i;
    EXPECT_LE(r.params_after, r.params_before);
    removals += r.removed_layers > 0 ? 1 : 0;
  }
  EXPECT_GT(removals, 0);
}

TEST(Reconfigure, IsIdempotent) {
  std::mt19937_64 rng(5);
  const auto g0 = fixtures::random_model(rng);
  auto g = g0;
  zero_flagged_channels(g, fixtures::random_dead_channels(g, rng));
  auto masks = detect_zeroed_channels(g, 1e-4);
  zero_flagged_channels(g, masks);
  const auto once = apply_reconfiguration(g, plan_reconfiguration(masks, g));
  const auto twice = apply_reconfiguration(once, plan_reconfiguration(detect_zeroed_channels(once, 1e-4), once));
  EXPECT_EQ(architecture_to_json(once), architecture_to_json(twice));
}

TEST(Reconfigure, RejectsStalePlans) {
  auto g = small_vgg();
  const auto ids = weighted_layer_ids(g);
  kill_output(g, ids[0], 0);
  kill_input(g, ids[1], 0);
  const auto plan = plan_reconfiguration(detect_zeroed_channels(g, 1e-4), g);
  const auto pruned = apply_reconfiguration(g, plan);
  EXPECT_THROW(apply_reconfiguration(pruned, plan), ConsistencyError);
}

TEST(Reconfigure, MasksMapBackToOriginalChannels) {
  auto g0 = small_vgg();
  const auto ids = weighted_layer_ids(g0);
  auto g = g0;
  kill_output(g, ids[0], 1);
  kill_input(g, ids[1], 1);
  const auto pruned = apply_reconfiguration(g, plan_reconfiguration(detect_zeroed_channels(g, 1e-4), g));
  auto now = pruned;
  kill_output(now, ids[0], 2);  // original channel 3
  const auto back = masks_in_original_coordinates(detect_zeroed_channels(now, 1e-4), now, g0);
  EXPECT_EQ(mask_for(back, ids[0], MaskDirection::kOutput).zeroed, (std::vector<bool>{false, true, false, true}));
  EXPECT_EQ(mask_for(back, ids[1], MaskDirection::kInput).zeroed, (std::vector<bool>{false, true, false, false}));
}

TEST(Revival, CountsChannelsThatComeBack) {
  auto g = small_vgg();
  const int conv = weighted_layer_ids(g)[0];
  auto history = make_sparsity_history(g);
  record_sparsity(history, g, 0);
  auto dead = g;
  kill_output(dead, conv, 0);
  kill_output(dead, conv, 1);
  record_sparsity(history, dead, 1);
  auto partly = dead;
  partly.layer(conv).weight[0] = 0.5;  // channel 0 returns
  record_sparsity(history, partly, 2);
  EXPECT_THROW(record_sparsity(history, partly, 2), ConsistencyError);
  const auto report = revival_report(history, 1e-4);
  EXPECT_EQ(report.ever_zeroed, 2);
  EXPECT_EQ(report.revived, 1);
  EXPECT_DOUBLE_EQ(report.revived_channel_fraction, 0.5);
  const auto round = sparsity_history_from_json(sparsity_history_to_json(history));
  EXPECT_EQ(revival_report_to_json(revival_report(round, 1e-4)), revival_report_to_json(report));
  EXPECT_EQ(revival_report(make_sparsity_history(g), 1e-4).revived_channel_fraction, 0.0);
}

TEST(Revival, PrunedChannelsStayDead) {
  auto g = small_vgg();
  const auto ids = weighted_layer_ids(g);
  auto history = make_sparsity_history(g);
  kill_output(g, ids[0], 3);
  kill_input(g, ids[1], 3);
  record_sparsity(history, g, 0);
  const auto pruned = apply_reconfiguration(g, plan_reconfiguration(detect_zeroed_channels(g, 1e-4), g));
  record_sparsity(history, pruned, 1);
  EXPECT_EQ(history.records.back().max_abs.at(ids[0])[3], 0.0);
  EXPECT_EQ(revival_report(history, 1e-4).revived, 0);
}

}  // namespace
}  // namespace slimtrain
