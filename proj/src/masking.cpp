#include "bdlm/masking.hpp"

#include <stdexcept>

namespace bdlm {

namespace {
constexpr int kDenseCap = 4096;
}

BlockGeometry::BlockGeometry(int L, int D) : seq_len(L), block_size(D) {
  if (D < 1) throw std::invalid_argument("BlockGeometry: block size must be >= 1");
  if (L < 1) throw std::invalid_argument("BlockGeometry: sequence length must be >= 1");
  if (L % D != 0) {
    throw std::invalid_argument("BlockGeometry: sequence length " + std::to_string(L) +
                                " is not a multiple of block size " + std::to_string(D));
  }
}

bool AttentionPattern::allowed(int q, int k) const {
  if (q < 0 || q >= nq_ || k < 0 || k >= nk_) {
    throw std::out_of_range("AttentionPattern: index out of range");
  }
  switch (kind_) {
    case Kind::kBlockDiagonal:
      return q / block_ == k / block_;
    case Kind::kOffsetBlockCausal:
      return k / block_ < q / block_;
    case Kind::kBlockCausal:
      return k / block_ <= q / block_;
    case Kind::kTraining: {
      const bool q_noised = q < half_;
      const bool k_noised = k < half_;
      const int qb = (q_noised ? q : q - half_) / block_;
      const int kb = (k_noised ? k : k - half_) / block_;
      if (q_noised && k_noised) return qb == kb;   // M_BD
      if (q_noised && !k_noised) return kb < qb;   // M_OBC
      if (!q_noised && k_noised) return false;     // zero quadrant
      return kb <= qb;                             // M_BC
    }
    case Kind::kInference:
      return true;
    case Kind::kCustom:
      return pred_(q, k);
  }
  return false;
}

std::vector<std::uint8_t> AttentionPattern::dense() const {
  if (nq_ > kDenseCap || nk_ > kDenseCap) {
    throw std::runtime_error("AttentionPattern: dense materialization capped at " +
                             std::to_string(kDenseCap) + " per side");
  }
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(nq_) * static_cast<std::size_t>(nk_));
  for (int q = 0; q < nq_; ++q) {
    for (int k = 0; k < nk_; ++k) {
      grid[static_cast<std::size_t>(q) * static_cast<std::size_t>(nk_) +
           static_cast<std::size_t>(k)] = allowed(q, k) ? 1 : 0;
    }
  }
  return grid;
}

void AttentionPattern::check_rows_nonempty(const char* what) const {
  for (int q = 0; q < nq_; ++q) {
    bool any = false;
    for (int k = 0; k < nk_ && !any; ++k) any = allowed(q, k);
    if (!any) {
      throw std::invalid_argument(std::string(what) + ": query row " + std::to_string(q) +
                                  " admits no keys");
    }
  }
}

AttentionPattern AttentionPattern::from_predicate(int nq, int nk,
                                                  std::function<bool(int, int)> pred) {
  if (nq < 1 || nk < 1) throw std::invalid_argument("AttentionPattern: empty pattern");
  AttentionPattern p(Kind::kCustom, nq, nk, 1, 0);
  p.pred_ = std::move(pred);
  p.check_rows_nonempty("AttentionPattern");
  return p;
}

AttentionPattern block_diagonal(const BlockGeometry& geom) {
  AttentionPattern p(AttentionPattern::Kind::kBlockDiagonal, geom.seq_len, geom.seq_len,
                     geom.block_size, 0);
  p.check_rows_nonempty("block_diagonal");
  return p;
}

AttentionPattern offset_block_causal(const BlockGeometry& geom) {
  // First-block rows legitimately admit no keys; the non-empty-row invariant
  // is enforced on the combined masks that attention actually consumes.
  return AttentionPattern(AttentionPattern::Kind::kOffsetBlockCausal, geom.seq_len,
                          geom.seq_len, geom.block_size, 0);
}

AttentionPattern block_causal(const BlockGeometry& geom) {
  AttentionPattern p(AttentionPattern::Kind::kBlockCausal, geom.seq_len, geom.seq_len,
                     geom.block_size, 0);
  p.check_rows_nonempty("block_causal");
  return p;
}

AttentionPattern build_training_mask(const BlockGeometry& geom) {
  AttentionPattern p(AttentionPattern::Kind::kTraining, 2 * geom.seq_len, 2 * geom.seq_len,
                     geom.block_size, geom.seq_len);
  p.check_rows_nonempty("build_training_mask");
  return p;
}

AttentionPattern build_inference_mask(int prefix_len, int window_len) {
  if (window_len < 1) throw std::invalid_argument("build_inference_mask: window_len must be >= 1");
  if (prefix_len < 0) throw std::invalid_argument("build_inference_mask: negative prefix_len");
  return AttentionPattern(AttentionPattern::Kind::kInference, window_len,
                          prefix_len + window_len, 1, 0);
}

std::string render_pattern(const AttentionPattern& pattern, int quadrant_at) {
  std::string out;
  const int nq = pattern.n_queries();
  const int nk = pattern.n_keys();
  for (int q = 0; q < nq; ++q) {
    if (quadrant_at > 0 && q == quadrant_at) {
      for (int k = 0; k < nk; ++k) {
        if (k == quadrant_at) out += '+';
        out += '-';
      }
      out += '\n';
    }
    for (int k = 0; k < nk; ++k) {
      if (quadrant_at > 0 && k == quadrant_at) out += '|';
      out += pattern.allowed(q, k) ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

}  // namespace bdlm
