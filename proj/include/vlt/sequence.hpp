#pragma once

#include <cstdint>

#include "vlt/tensor.hpp"

namespace vlt {

// Segment structure of the unified multimodal token sequence:
// [language | template | search], search always last and nonempty.
struct ModalityLayout {
  std::int64_t n_lang = 0;
  std::int64_t n_template = 0;
  std::int64_t n_search = 0;

  bool has_lang() const { return n_lang > 0; }
  bool has_template() const { return n_template > 0; }
  std::int64_t total() const { return n_lang + n_template + n_search; }

  void validate(std::int64_t token_count) const {
    if (n_lang < 0 || n_template < 0 || n_search < 1)
      throw LayoutError("layout: invalid segment sizes");
    if (total() != token_count)
      throw LayoutError("layout: segments sum to " + std::to_string(total()) +
                        " but sequence has " + std::to_string(token_count) +
                        " tokens");
  }
};

struct TokenSequence {
  Tensor tokens;  // (N, d_model)
  ModalityLayout layout;

  void validate() const { layout.validate(tokens.dim(0)); }
};

}  // namespace vlt
