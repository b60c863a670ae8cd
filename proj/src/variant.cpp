#include "hsad/variant.hpp"

#include "hsad/errors.hpp"

namespace hsad {

namespace {

constexpr Variant kAll[] = {Variant::kCae,    Variant::kDsvdd,     Variant::kIaead,
                            Variant::kDsvddKl, Variant::kDlsvdd,   Variant::kDlsvddKl,
                            Variant::kIaeKl,  Variant::kIaeLstm,   Variant::kIaeLstmKl};

}  // namespace

VariantTraits traits(Variant v) {
  switch (v) {
    case Variant::kCae:
      return {.lstm = false, .decoder = true, .svdd = false, .kl = false};
    case Variant::kDsvdd:
      return {.lstm = false, .decoder = false, .svdd = true, .kl = false};
    case Variant::kIaead:
      return {.lstm = false, .decoder = true, .svdd = true, .kl = false};
    case Variant::kDsvddKl:
      return {.lstm = false, .decoder = false, .svdd = true, .kl = true};
    case Variant::kDlsvdd:
      return {.lstm = true, .decoder = false, .svdd = true, .kl = false};
    case Variant::kDlsvddKl:
      return {.lstm = true, .decoder = false, .svdd = true, .kl = true};
    case Variant::kIaeKl:
      return {.lstm = false, .decoder = true, .svdd = true, .kl = true};
    case Variant::kIaeLstm:
      return {.lstm = true, .decoder = true, .svdd = true, .kl = false};
    case Variant::kIaeLstmKl:
      return {.lstm = true, .decoder = true, .svdd = true, .kl = true};
  }
  throw ConfigError("unknown variant");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kCae:
      return "cae";
    case Variant::kDsvdd:
      return "dsvdd";
    case Variant::kIaead:
      return "iaead";
    case Variant::kDsvddKl:
      return "dsvdd-kl";
    case Variant::kDlsvdd:
      return "dlsvdd";
    case Variant::kDlsvddKl:
      return "dlsvdd-kl";
    case Variant::kIaeKl:
      return "iae-kl";
    case Variant::kIaeLstm:
      return "iae-lstm";
    case Variant::kIaeLstmKl:
      return "iae-lstm-kl";
  }
  return "?";
}

std::string variant_tag(Variant v, Boundary b) {
  if (!traits(v).svdd) return variant_name(v);
  return variant_name(v) + (b == Boundary::kHard ? "-h" : "-s");
}

std::vector<std::string> all_variant_tags() {
  std::vector<std::string> tags;
  for (Variant v : kAll) {
    tags.push_back(variant_tag(v, Boundary::kHard));
    if (traits(v).svdd) tags.push_back(variant_tag(v, Boundary::kSoft));
  }
  return tags;
}

VariantTag parse_variant_tag(const std::string& tag) {
  for (Variant v : kAll) {
    for (Boundary b : {Boundary::kHard, Boundary::kSoft}) {
      if (variant_tag(v, b) == tag) return {v, b};
    }
  }
  std::string valid;
  for (const auto& t : all_variant_tags()) valid += (valid.empty() ? "" : ", ") + t;
  throw ConfigError("unknown variant '" + tag + "'; valid variants: " + valid);
}

}  // namespace hsad
