// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "promptdst/vocab.hpp"

namespace pdst {

struct LMConfig {
  int layers = 2;
  int model_dim = 64;
  int heads = 4;
  int context_length = 96;
  std::uint64_t seed = 1;
};

struct BatchItem {
  std::vector<int> prefix;
  std::vector<int> target;
  double weight = 1.0;
  // Optional per-target-position weights (reward-weighted training);
  // empty means all ones.
  std::vector<double> pos_weights;
};

struct TrainBatch {
  std::vector<BatchItem> items;
};

// by_weight_sum: sum_i w_i * item_nll_i / sum_i w_i (the default
// teacher-forced objective). by_count: sum_i w_i * item_nll_i / n_items,
// used for the reward term so that zero rewards give exactly zero loss
// and scaling rewards scales gradients proportionally.
enum class LossNorm { by_weight_sum, by_count };

struct DecodeResult {
  std::vector<int> tokens;  // generated ids, end-of-answer excluded
  std::string text;
  std::vector<double> stepwise_logprobs;
  bool hit_eoa = false;
};

// Incremental decoding state: per-layer key/value rows for the already
// processed positions.
struct DecodeState {
  std::vector<std::vector<double>> k_cache;  // per layer, len * dim
  std::vector<std::vector<double>> v_cache;
  int len = 0;
};

// Pre-norm causal transformer over a word vocabulary, double precision,
// flat parameter vector, manual backprop. A leading BOS is added
// internally; token arguments never include it.
class CausalLM {
 public:
  CausalLM(const LMConfig& cfg, Vocabulary vocab);

  const LMConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  size_t n_params() const { return params_.size(); }

  // Weighted batch NLL over target positions only.
  double nll(const TrainBatch& batch,
             LossNorm norm = LossNorm::by_weight_sum) const;

  // Same value as nll(), and accumulates scale * d(loss)/d(params) into
  // grad (which must have n_params() entries).
  double nll_grad(const TrainBatch& batch, LossNorm norm, double scale,
                  std::vector<double>& grad) const;

  // Greedy argmax decoding; stops at end-of-answer or max_new tokens;
  // argmax ties break toward the lowest token id.
  DecodeResult generate(const std::vector<int>& prefix, int max_new) const;

  // Sum of log P(target_j | prefix, target_<j) over the given target
  // ids, exactly as passed (append the end-of-answer id to score it).
  double sequence_logprob(const std::vector<int>& prefix,
                          const std::vector<int>& target) const;

  // Next-token distribution after the given context tokens.
  std::vector<double> next_distribution(const std::vector<int>& context) const;

  // Incremental decoding plumbing (used by generate and the ensemble).
  DecodeState prefill(const std::vector<int>& prefix,
                      std::vector<double>& first_dist) const;
  std::vector<double> decode_step(DecodeState& state, int token) const;

 private:
  LMConfig cfg_;
  Vocabulary vocab_;
  std::vector<double> params_;
};

// One plain SGD step on the batch loss; returns the loss. Deterministic;
// lr = 0 leaves parameters unchanged (test hook). Throws on non-finite
// loss.
double train_step(CausalLM& model, const TrainBatch& batch, double lr);

// Lockstep greedy decoding over per-model prefixes: at each step the
// next-token distributions are mixed with the normalized weights, the
// argmax token is chosen once, and every model advances on it. All
// models must share one vocabulary.
DecodeResult ensemble_generate(const std::vector<const CausalLM*>& models,
                               const std::vector<double>& weights,
                               const std::vector<std::vector<int>>& prefixes,
                               int max_new);

// Same prefix for every model.
DecodeResult ensemble_generate(const std::vector<const CausalLM*>& models,
                               const std::vector<double>& weights,
                               const std::vector<int>& prefix, int max_new);

}  // namespace pdst
