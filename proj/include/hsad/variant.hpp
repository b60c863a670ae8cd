#pragma once

#include <string>
#include <vector>

namespace hsad {

/// Model family. Each family is a particular choice of encoder, LSTM module,
/// decoder and objective terms.
enum class Variant {
  kCae,        // autoencoder, reconstruction only
  kDsvdd,      // encoder + SVDD
  kIaead,      // autoencoder + SVDD, alpha-weighted reconstruction
  kDsvddKl,    // encoder + SVDD + KL
  kDlsvdd,     // encoder + LSTM + SVDD
  kDlsvddKl,   // encoder + LSTM + SVDD + KL
  kIaeKl,      // autoencoder + SVDD + KL
  kIaeLstm,    // autoencoder + LSTM + SVDD
  kIaeLstmKl,  // autoencoder + LSTM + SVDD + KL
};

enum class Boundary { kHard, kSoft };

struct VariantTraits {
  bool lstm = false;
  bool decoder = false;
  bool svdd = false;
  bool kl = false;
};

VariantTraits traits(Variant v);

std::string variant_name(Variant v);

/// Command-line tag such as "iae-lstm-kl-h"; the CAE has no boundary suffix.
std::string variant_tag(Variant v, Boundary b);

struct VariantTag {
  Variant variant;
  Boundary boundary;
};

/// Parses a tag produced by variant_tag(); throws ConfigError listing the
/// valid tags otherwise.
VariantTag parse_variant_tag(const std::string& tag);

std::vector<std::string> all_variant_tags();

}  // namespace hsad
