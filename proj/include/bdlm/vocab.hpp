#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bdlm {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the special
// tokens. Two ids are reserved for future specials so the default size is 260.
struct Vocabulary {
  int size = 260;
  int eos_id = 256;
  int mask_id = 257;

  static Vocabulary byte_level(int size = 260);

  void validate() const;

  // bytes of the text, optionally followed by EOS
  std::vector<int> encode(std::string_view text, bool append_eos = true) const;

  // byte tokens back to text; special ids are skipped
  std::string decode(std::span<const int> tokens) const;
};

}  // namespace bdlm
