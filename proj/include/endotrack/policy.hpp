#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "endotrack/format.hpp"
#include "endotrack/sim.hpp"
#include "endotrack/types.hpp"

namespace endotrack::policy {

struct PolicyConfig {
  int grid = 32;    // S: frame downsampled to S x S
  int embed = 16;   // E
  int hidden = 64;  // H
  int max_len = format::kDefaultMaxLen;
  double init_scale = 1.0;
  /// Subtracted from the frame block (not the one-hots) before the hidden
  /// transform. An empty background then maps to roughly zero.
  double feature_center = 0.8;

  int feature_dim() const { return grid * grid + 5; }
  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

struct FeatureVector {
  std::vector<double> values;
};

/// Block-mean downsample to S x S (cell i spans rows floor(i*N/S) to
/// floor((i+1)*N/S)), followed by task and instruction one-hots.
FeatureVector featurize(const sim::Frame& frame, Task task, Instruction instruction,
                        int grid);

/// Same frame block, different conditioning one-hots.
FeatureVector with_conditioning(FeatureVector features, Task task,
                                Instruction instruction, int grid);

/// Offsets of each block inside the flat parameter vector.
///
///   token_embedding  V x E
///   bos_embedding    E        (stands in for missing prefix tokens)
///   position_weight  L        (prefix-summary weights)
///   position_embed   L x E
///   w_feature        H x F
///   w_context        H x 4E   ([summary, last, second-last, position])
///   b_hidden         H
///   w_out            V x H
///   b_out            V
struct ParamLayout {
  explicit ParamLayout(const PolicyConfig& cfg);

  int vocab, embed, hidden, max_len, features, context;
  std::size_t token_embedding, bos_embedding, position_weight, position_embed,
      w_feature, w_context, b_hidden, w_out, b_out, total;
};

struct PolicyParams {
  PolicyConfig config;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

PolicyParams zero_params(const PolicyConfig& cfg);
PolicyParams init_params(const PolicyConfig& cfg, std::uint64_t seed);

/// Softmax over the vocabulary for the next token after `prefix`.
std::vector<double> token_distribution(const PolicyParams& params,
                                       const FeatureVector& features,
                                       const format::TokenSequence& prefix);

struct SampledCompletion {
  format::TokenSequence tokens;
  std::vector<double> logprobs;  // untempered, one per token
  bool greedy = false;
};

/// Ancestral sampling from softmax(logits / temperature) until EOS or
/// max_len. Logprobs are recorded under the untempered policy.
SampledCompletion sample(const PolicyParams& params, const FeatureVector& features,
                         double temperature, std::uint64_t seed);

SampledCompletion greedy_decode(const PolicyParams& params,
                                const FeatureVector& features);

/// Teacher-forced pass over a full token sequence. Keeps everything the
/// backward pass needs.
struct SequencePass {
  std::vector<double> hidden_input;  // W_f f + b_h, H
  std::vector<double> context;       // T x 4E
  std::vector<double> hidden;        // T x H (post tanh)
  std::vector<double> probs;         // T x V
  std::vector<double> logprobs;      // T, log p(token_t)
  int length = 0;
};

SequencePass forward(const PolicyParams& params, const FeatureVector& features,
                     const format::TokenSequence& tokens);

/// Accumulates d(objective)/d(params) into grad given d(objective)/d(logits)
/// for every position (T x V, row-major).
void backward(const PolicyParams& params, const FeatureVector& features,
              const format::TokenSequence& tokens, const SequencePass& pass,
              std::span<const double> dlogits, std::span<double> grad);

struct LogprobGrad {
  double logprob = 0.0;
  std::vector<double> grad;
};

/// Sum of per-token log-probabilities and its exact gradient.
LogprobGrad sequence_logprob_and_grad(const PolicyParams& params,
                                      const FeatureVector& features,
                                      const format::TokenSequence& tokens);

double sequence_logprob(const PolicyParams& params, const FeatureVector& features,
                        const format::TokenSequence& tokens);

// Checkpoints -----------------------------------------------------------------

struct Checkpoint {
  PolicyParams params;
  std::string tag = "init";  // init | sft | dft
  std::string config_hash;
  std::int64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws std::runtime_error on a bad magic/version or dimension mismatch.
Checkpoint load_checkpoint(const std::string& path);
/// Also verifies the stored dimensions against `expected`.
Checkpoint load_checkpoint(const std::string& path, const PolicyConfig& expected);

}  // namespace endotrack::policy
