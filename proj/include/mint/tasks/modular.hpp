#pragma once

// Modular addition task: learn c = (a + b) mod P from the full P*P table.
// Token ids 0..P-1 are the operands, id P is '='; each example is the
// three-token sequence (a, b, '=') labeled with c at the '=' position.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mint/core/error.hpp"
#include "mint/core/rng.hpp"
#include "mint/tasks/dataset.hpp"

namespace mint::tasks {

inline int modadd_oracle(int a, int b, int p) {
  if (p < 3) throw InputError("modulus must be >= 3, got " + std::to_string(p));
  if (a < 0 || a >= p || b < 0 || b >= p)
    throw InputError("operands (" + std::to_string(a) + ", " + std::to_string(b) +
                     ") out of range [0," + std::to_string(p) + ")");
  return (a + b) % p;
}

struct ModularTaskSpec {
  int modulus = 113;
  float train_fraction = 0.3f;
  std::uint64_t seed = 0;
};

inline int modadd_vocab_size(int modulus) { return modulus + 1; }
inline int modadd_eq_token(int modulus) { return modulus; }

/// Enumerates all P*P pairs, shuffles them with the seed, and splits by
/// train_fraction (floor for the train count). The two sets partition the
/// full table.
inline std::pair<Dataset, Dataset> gen_modadd(const ModularTaskSpec& spec) {
  const int p = spec.modulus;
  if (p < 3) throw InputError("modulus must be >= 3, got " + std::to_string(p));
  if (!(spec.train_fraction > 0.0f && spec.train_fraction < 1.0f))
    throw InputError("train_fraction must lie in (0,1)");
  std::vector<int> order(static_cast<std::size_t>(p) * static_cast<std::size_t>(p));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng = make_rng(spec.seed, RngStream::kDataSplit);
  rng.shuffle(order);

  const std::size_t n_train =
      static_cast<std::size_t>(static_cast<double>(order.size()) * spec.train_fraction);
  Dataset train, test;
  for (Dataset* ds : {&train, &test}) {
    ds->vocab_size = modadd_vocab_size(p);
    ds->kind = SupervisionKind::kFinalPosition;
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int a = order[i] / p, b = order[i] % p;
    Example ex;
    ex.tokens = {a, b, modadd_eq_token(p)};
    ex.labels = {modadd_oracle(a, b, p)};
    (i < n_train ? train : test).examples.push_back(std::move(ex));
  }
  return {std::move(train), std::move(test)};
}

}  // namespace mint::tasks
