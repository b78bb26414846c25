#pragma once

// Repeated-sequence task for induction heads: a uniform random prefix of
// length L followed by its exact copy. Supervision covers the second half,
// where the copy is predictable from the first occurrence.

#include <cstdint>
#include <string>
#include <vector>

#include "mint/core/error.hpp"
#include "mint/core/rng.hpp"
#include "mint/tasks/dataset.hpp"

namespace mint::tasks {

struct RepeatedSeqSpec {
  int vocab_size = 64;
  int prefix_len = 25;
  int count = 2048;
  std::uint64_t seed = 0;
};

inline Dataset gen_repeated(const RepeatedSeqSpec& spec) {
  if (spec.vocab_size < 2) throw InputError("repeated-sequence vocab must be >= 2");
  if (spec.prefix_len < 1) throw InputError("prefix length must be >= 1");
  Rng rng = make_rng(spec.seed, RngStream::kSampling);
  Dataset ds;
  ds.vocab_size = spec.vocab_size;
  ds.kind = SupervisionKind::kSecondHalf;
  ds.examples.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    Example ex;
    ex.tokens.resize(static_cast<std::size_t>(2 * spec.prefix_len));
    for (int t = 0; t < spec.prefix_len; ++t) {
      int tok = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab_size)));
      ex.tokens[static_cast<std::size_t>(t)] = tok;
      ex.tokens[static_cast<std::size_t>(t + spec.prefix_len)] = tok;
    }
    ex.labels.assign(ex.tokens.begin() + spec.prefix_len, ex.tokens.end());
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace mint::tasks
