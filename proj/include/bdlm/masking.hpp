#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bdlm {

// Sequence/block geometry: L tokens split into B = L/D non-overlapping blocks.
struct BlockGeometry {
  int seq_len;     // L
  int block_size;  // D

  BlockGeometry(int L, int D);

  int block_count() const { return seq_len / block_size; }
  int block_of(int pos) const { return pos / block_size; }
};

// Boolean query->key admissibility relation. Structured kinds evaluate a
// predicate directly; dense() materializes the full grid for tests (capped).
class AttentionPattern {
 public:
  int n_queries() const { return nq_; }
  int n_keys() const { return nk_; }

  bool allowed(int q, int k) const;

  // Row-major nq*nk grid of 0/1. Capped at 4096 per side.
  std::vector<std::uint8_t> dense() const;

  // Fails if any query row admits zero keys.
  static AttentionPattern from_predicate(int nq, int nk,
                                         std::function<bool(int, int)> pred);

 private:
  enum class Kind {
    kBlockDiagonal,
    kOffsetBlockCausal,
    kBlockCausal,
    kTraining,
    kInference,
    kCustom,
  };

  AttentionPattern(Kind kind, int nq, int nk, int block, int half)
      : kind_(kind), nq_(nq), nk_(nk), block_(block), half_(half) {}

  void check_rows_nonempty(const char* what) const;

  Kind kind_;
  int nq_ = 0;
  int nk_ = 0;
  int block_ = 1;  // D
  int half_ = 0;   // L, for the 2L x 2L training mask
  std::function<bool(int, int)> pred_;

  friend AttentionPattern block_diagonal(const BlockGeometry&);
  friend AttentionPattern offset_block_causal(const BlockGeometry&);
  friend AttentionPattern block_causal(const BlockGeometry&);
  friend AttentionPattern build_training_mask(const BlockGeometry&);
  friend AttentionPattern build_inference_mask(int, int);
};

// M_BD: bidirectional attention within the same block (L x L).
AttentionPattern block_diagonal(const BlockGeometry& geom);

// M_OBC: noised queries over clean keys of strictly earlier blocks (L x L).
// Rows of the first block admit no keys; this quadrant is only ever used as
// part of the combined training mask.
AttentionPattern offset_block_causal(const BlockGeometry& geom);

// M_BC: keys in the same or an earlier block (L x L).
AttentionPattern block_causal(const BlockGeometry& geom);

// M_full = [[M_BD, M_OBC], [0, M_BC]]  (2L x 2L).
// Queries/keys 0..L-1 are the noised half, L..2L-1 the clean half.
AttentionPattern build_training_mask(const BlockGeometry& geom);

// Decode-time mask: window_len queries over prefix_len + window_len keys,
// all admissible (causal prefix plus bidirectional window).
AttentionPattern build_inference_mask(int prefix_len, int window_len);

// Renders a pattern as rows of 0/1 characters. For the 2L x 2L training mask
// pass quadrant_at = L to insert quadrant separators.
std::string render_pattern(const AttentionPattern& pattern, int quadrant_at = 0);

}  // namespace bdlm
