#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "hatenorm/error.hpp"
#include "hatenorm/rng.hpp"

namespace hatenorm {

inline constexpr double kMinIntensity = 1.0;
inline constexpr double kMaxIntensity = 10.0;

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

namespace detail {

// Length of the whitespace sequence starting at `s[i]`, 0 if none. Covers
// ASCII whitespace plus the Unicode White_Space code points encoded as UTF-8.
inline std::size_t whitespace_length(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
    return 1;
  }
  auto byte = [&](std::size_t k) -> unsigned {
    return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u;
  };
  if (c == 0xC2) {
    // U+0085 NEL, U+00A0 NBSP
    if (byte(1) == 0x85 || byte(1) == 0xA0) return 2;
    return 0;
  }
  if (c == 0xE1) {
    // U+1680 OGHAM SPACE MARK
    if (byte(1) == 0x9A && byte(2) == 0x80) return 3;
    return 0;
  }
  if (c == 0xE2) {
    const unsigned b1 = byte(1), b2 = byte(2);
    // U+2000..U+200A, U+2028, U+2029, U+202F
    if (b1 == 0x80 && ((b2 >= 0x80 && b2 <= 0x8A) || b2 == 0xA8 || b2 == 0xA9 || b2 == 0xAF)) {
      return 3;
    }
    // U+205F MEDIUM MATHEMATICAL SPACE
    if (b1 == 0x81 && b2 == 0x9F) return 3;
    return 0;
  }
  if (c == 0xE3) {
    // U+3000 IDEOGRAPHIC SPACE
    if (byte(1) == 0x80 && byte(2) == 0x80) return 3;
  }
  return 0;
}

}  // namespace detail

// Splits on Unicode whitespace. Everything else, including punctuation,
// @-mentions and #hashtags, stays inside its token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  std::size_t start = std::string_view::npos;
  while (i < text.size()) {
    const std::size_t ws = detail::whitespace_length(text, i);
    if (ws > 0) {
      if (start != std::string_view::npos) {
        tokens.emplace_back(text.substr(start, i - start));
        start = std::string_view::npos;
      }
      i += ws;
    } else {
      if (start == std::string_view::npos) start = i;
      ++i;
    }
  }
  if (start != std::string_view::npos) tokens.emplace_back(text.substr(start));
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spans and BIO tags
// ---------------------------------------------------------------------------

enum class BioTag : std::uint8_t { B = 0, I = 1, O = 2 };
inline constexpr std::size_t kNumTags = 3;
inline constexpr std::array<BioTag, kNumTags> kAllTags = {BioTag::B, BioTag::I, BioTag::O};

inline std::size_t tag_index(BioTag t) { return static_cast<std::size_t>(t); }
inline BioTag tag_from_index(std::size_t i) { return static_cast<BioTag>(i); }
inline char tag_char(BioTag t) { return "BIO"[tag_index(t)]; }

using TagSeq = std::vector<BioTag>;

// Token-index span, inclusive on both ends.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  friend auto operator<=>(const Span&, const Span&) = default;
};

// Throws InvalidSpanError unless spans are sorted, non-overlapping and inside
// [0, n_tokens).
inline void validate_spans(std::size_t n_tokens, const std::vector<Span>& spans) {
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const Span& s = spans[k];
    if (s.start > s.end) {
      throw InvalidSpanError("span " + std::to_string(k) + " has start > end");
    }
    if (s.end >= n_tokens) {
      throw InvalidSpanError("span " + std::to_string(k) + " ends at " + std::to_string(s.end) +
                             " but sequence has " + std::to_string(n_tokens) + " tokens");
    }
    if (k > 0 && s.start <= spans[k - 1].end) {
      throw InvalidSpanError("span " + std::to_string(k) + " overlaps or precedes span " +
                             std::to_string(k - 1));
    }
  }
}

inline TagSeq encode_bio(std::size_t n_tokens, const std::vector<Span>& spans) {
  validate_spans(n_tokens, spans);
  TagSeq tags(n_tokens, BioTag::O);
  for (const Span& s : spans) {
    tags[s.start] = BioTag::B;
    for (std::size_t i = s.start + 1; i <= s.end; ++i) tags[i] = BioTag::I;
  }
  return tags;
}

// Maximal B I* runs become spans. An I that follows O (or starts the
// sequence) opens a new span, so every tag sequence decodes.
inline std::vector<Span> decode_bio(const TagSeq& tags) {
  std::vector<Span> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    switch (tags[i]) {
      case BioTag::B:
        spans.push_back({i, i});
        open = true;
        break;
      case BioTag::I:
        if (open) {
          spans.back().end = i;
        } else {
          spans.push_back({i, i});
          open = true;
        }
        break;
      case BioTag::O:
        open = false;
        break;
    }
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Samples and corpora
// ---------------------------------------------------------------------------

struct Sample {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  double intensity = kMinIntensity;
  std::vector<Span> spans;
  std::optional<std::string> normalized_text;
  std::optional<double> normalized_intensity;
  std::optional<std::int64_t> engagement;

  // Builds a sample from raw text; tokens are derived, never supplied.
  static Sample make(std::string id, std::string text, double intensity,
                     std::vector<Span> spans = {}) {
    Sample s;
    s.id = std::move(id);
    s.text = std::move(text);
    s.tokens = tokenize(s.text);
    s.intensity = intensity;
    s.spans = std::move(spans);
    return s;
  }

  std::vector<std::string> normalized_tokens() const {
    return normalized_text ? tokenize(*normalized_text) : std::vector<std::string>{};
  }

  void validate() const {
    auto in_range = [](double v) {
      return std::isfinite(v) && v >= kMinIntensity && v <= kMaxIntensity;
    };
    if (!in_range(intensity)) {
      throw ValidationError("intensity", "must lie in [1, 10], got " + std::to_string(intensity));
    }
    if (normalized_intensity && !in_range(*normalized_intensity)) {
      throw ValidationError("normalized_intensity", "must lie in [1, 10], got " +
                                                        std::to_string(*normalized_intensity));
    }
    if (engagement && *engagement < 0) {
      throw ValidationError("engagement", "must be non-negative");
    }
    if (tokens != tokenize(text)) {
      throw ValidationError("tokens", "do not match tokenize(text)");
    }
    try {
      validate_spans(tokens.size(), spans);
    } catch (const InvalidSpanError& e) {
      throw ValidationError("spans", e.what());
    }
  }

  friend bool operator==(const Sample&, const Sample&) = default;
};

// Immutable collection of samples plus corpus-level token statistics.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Sample> samples) : samples_(std::move(samples)) { rebuild_stats(); }

  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  const std::unordered_map<std::string, std::size_t>& term_frequency() const { return tf_; }
  const std::unordered_map<std::string, std::size_t>& document_frequency() const { return df_; }
  std::size_t total_tokens() const { return total_tokens_; }

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.samples_ == b.samples_; }

 private:
  void rebuild_stats() {
    tf_.clear();
    df_.clear();
    total_tokens_ = 0;
    for (const Sample& s : samples_) {
      std::unordered_set<std::string> seen;
      for (const std::string& t : s.tokens) {
        ++tf_[t];
        ++total_tokens_;
        if (seen.insert(t).second) ++df_[t];
      }
    }
  }

  std::vector<Sample> samples_;
  std::unordered_map<std::string, std::size_t> tf_;
  std::unordered_map<std::string, std::size_t> df_;
  std::size_t total_tokens_ = 0;
};

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json sample_to_json(const Sample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["text"] = s.text;
  j["intensity"] = s.intensity;
  auto spans = nlohmann::ordered_json::array();
  for (const Span& sp : s.spans) spans.push_back({sp.start, sp.end});
  j["spans"] = std::move(spans);
  if (s.normalized_text) j["normalized_text"] = *s.normalized_text;
  if (s.normalized_intensity) j["normalized_intensity"] = *s.normalized_intensity;
  if (s.engagement) j["engagement"] = *s.engagement;
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!j.contains(name)) throw ValidationError(name, "missing required field");
    return j.at(name);
  };
  if (!j.is_object()) throw ValidationError("", "record is not a JSON object");
  Sample s;
  try {
    s.id = field("id").get<std::string>();
    s.text = field("text").get<std::string>();
  } catch (const nlohmann::json::type_error&) {
    throw ValidationError("id/text", "must be strings");
  }
  const auto& inten = field("intensity");
  if (!inten.is_number()) throw ValidationError("intensity", "must be a number");
  s.intensity = inten.get<double>();
  s.tokens = tokenize(s.text);
  if (j.contains("spans")) {
    const auto& arr = j.at("spans");
    if (!arr.is_array()) throw ValidationError("spans", "must be an array");
    for (const auto& sp : arr) {
      if (!sp.is_array() || sp.size() != 2 || !sp[0].is_number_integer() ||
          !sp[1].is_number_integer() || sp[0].get<std::int64_t>() < 0 ||
          sp[1].get<std::int64_t>() < 0) {
        throw ValidationError("spans", "each span must be [start, end] with non-negative ints");
      }
      s.spans.push_back({sp[0].get<std::size_t>(), sp[1].get<std::size_t>()});
    }
  }
  if (j.contains("normalized_text") && !j.at("normalized_text").is_null()) {
    if (!j.at("normalized_text").is_string()) {
      throw ValidationError("normalized_text", "must be a string");
    }
    s.normalized_text = j.at("normalized_text").get<std::string>();
  }
  if (j.contains("normalized_intensity") && !j.at("normalized_intensity").is_null()) {
    if (!j.at("normalized_intensity").is_number()) {
      throw ValidationError("normalized_intensity", "must be a number");
    }
    s.normalized_intensity = j.at("normalized_intensity").get<double>();
  }
  if (j.contains("engagement") && !j.at("engagement").is_null()) {
    if (!j.at("engagement").is_number_integer()) {
      throw ValidationError("engagement", "must be an integer");
    }
    s.engagement = j.at("engagement").get<std::int64_t>();
  }
  s.validate();
  return s;
}

inline Corpus read_corpus(std::istream& in) {
  std::vector<Sample> samples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, std::string("malformed JSON: ") + e.what());
    }
    try {
      samples.push_back(sample_from_json(j));
    } catch (const ValidationError& e) {
      throw ValidationError(e.field(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return Corpus(std::move(samples));
}

inline void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const Sample& s : corpus.samples()) out << sample_to_json(s).dump() << '\n';
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path);
  return read_corpus(in);
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus file " + path);
  write_corpus(corpus, out);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 13;

  void validate() const {
    if (!(train > 0 && val > 0 && test > 0)) throw ValidationError("ratios", "each must be > 0");
    if (std::abs(train + val + test - 1.0) > 1e-9) {
      throw ValidationError("ratios", "must sum to 1");
    }
  }
};

struct CorpusSplit {
  Corpus train, val, test;
};

// Shuffles with the seed, then gives val and test floor(n * ratio) samples
// each; the remainder goes to train. A 1e-9 slack absorbs ratios such as 1/7
// that are not exactly representable.
inline CorpusSplit split_corpus(const Corpus& corpus, const SplitSpec& spec) {
  spec.validate();
  if (corpus.empty()) throw EmptyInputError("cannot split an empty corpus");
  const std::size_t n = corpus.size();
  auto share = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  const std::size_t n_val = share(spec.val);
  const std::size_t n_test = share(spec.test);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);

  std::vector<Sample> tr, va, te;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t k = 0; k < n; ++k) {
    const Sample& s = corpus[order[k]];
    if (k < n_train) {
      tr.push_back(s);
    } else if (k < n_train + n_val) {
      va.push_back(s);
    } else {
      te.push_back(s);
    }
  }
  return {Corpus(std::move(tr)), Corpus(std::move(va)), Corpus(std::move(te))};
}

// ---------------------------------------------------------------------------
// Synthetic parallel corpus
// ---------------------------------------------------------------------------

struct PlantedTerm {
  std::vector<std::string> tokens;
  std::vector<std::string> replacement;
};

struct SyntheticConfig {
  // Sentence fragments hateful samples are built from.
  std::vector<std::vector<std::string>> targeted_templates;
  // Fragments for benign samples; these never carry planted terms.
  std::vector<std::vector<std::string>> benign_templates;
  std::vector<PlantedTerm> mild;
  std::vector<PlantedTerm> severe;
  std::vector<PlantedTerm> violence;
  double mild_weight = 2.0;
  double severe_weight = 4.0;
  double violence_weight = 7.0;
  std::size_t num_samples = 2800;
  std::size_t templates_per_sample = 2;
  double benign_fraction = 0.2;
  bool with_engagement = true;
};

namespace detail {

inline std::vector<std::vector<std::string>> split_all(std::initializer_list<const char*> lines) {
  std::vector<std::vector<std::string>> out;
  for (const char* l : lines) out.push_back(tokenize(l));
  return out;
}

inline std::vector<PlantedTerm> terms(
    std::initializer_list<std::pair<const char*, const char*>> pairs) {
  std::vector<PlantedTerm> out;
  for (const auto& [hate, neutral] : pairs) out.push_back({tokenize(hate), tokenize(neutral)});
  return out;
}

}  // namespace detail

// Built-in lexicon. Hate terms are masked placeholders; none of them occur in
// the templates.
inline SyntheticConfig default_synthetic_config() {
  SyntheticConfig c;
  c.targeted_templates = detail::split_all({
      "those people from across the border keep moving into our street .",
      "i saw a whole group of them outside the station again today",
      "they always get their stories on the evening news",
      "my neighbour says the new arrivals are everywhere now !",
      "nobody asked for them to settle in this town",
      "every time i open the paper there is another story about them",
      "the council keeps spending money on their housing",
      "why do they get special treatment at the clinic ?",
      "you can hear them shouting in the park every night",
      "our school is full of their kids this year",
      "someone should tell them how things work around here",
      "they took over the corner shop last month",
      "the whole district has changed since they came",
      "i am tired of hearing their complaints on the radio",
      "they never learn the local language properly .",
      "another bus full of them arrived this morning",
      "look at what they did to the old market square",
      "people like them get every benefit going",
      "the queue at the office was all of them again",
      "i do not want them near my family",
      "they are planning another march through the centre",
      "my cousin lost his job and guess who got it",
      "all the new flats went straight to them",
      "they keep posting videos about their culture online",
  });
  c.benign_templates = detail::split_all({
      "the weather was lovely this morning so we went for a walk .",
      "just finished a great book about ancient history",
      "our team won the match last night !",
      "i made pancakes for breakfast and they were perfect",
      "the library has a new exhibition on local birds",
      "happy birthday to my best friend , have a great day",
      "the train was on time for once , what a surprise",
      "we planted tomatoes and beans in the garden this weekend",
      "does anyone know a good recipe for lentil soup ?",
      "the concert in the square was fantastic .",
      "my grandmother turned ninety and still plays chess every day",
      "the new bridge finally opened to cyclists",
      "i am learning to play the guitar slowly but surely",
      "the sunset over the lake was beautiful tonight",
      "we adopted a small grey kitten from the shelter",
      "the bakery on the corner sells the best bread",
      "finally fixed the leaking tap in the kitchen",
      "the museum is free to visit on sundays .",
      "my daughter scored her first goal at football practice",
      "looking forward to the summer holidays with the family",
      "the hiking trail up the hill has amazing views",
      "coffee with old friends is the best way to start a weekend",
      "the farmers market had fresh strawberries today",
      "i finished painting the fence before the rain started",
  });
  c.mild = detail::terms({
      {"#sendthemback", "#debate"},
      {"#notwelcome", "#opinion"},
      {"#banthem", "#discussion"},
      {"id*ots", "people"},
      {"cl*wns", "folks"},
      {"l*sers", "neighbours"},
  });
  c.severe = detail::terms({
      {"v*rmin", "people"},
      {"sc*m", "individuals"},
      {"p*rasites", "residents"},
      {"s*bhumans", "newcomers"},
      {"tr*sh", "citizens"},
      {"filthy r*ts", "folks"},
  });
  c.violence = detail::terms({
      {"k*ll them all", "argue with them"},
      {"wipe them out", "talk to them"},
      {"burn their homes", "visit their homes"},
      {"h*ng them", "debate them"},
      {"sh**t them on sight", "ignore them"},
  });
  return c;
}

// Builds a parallel corpus whose intensity is an additive clamped lexicon
// score: clamp(1 + sum of planted weights, 1, 10).
inline Corpus generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.mild.empty() && config.severe.empty() && config.violence.empty()) {
    throw ValidationError("lexicon", "no planted hate terms configured");
  }
  if (config.targeted_templates.empty()) {
    throw ValidationError("targeted_templates", "must not be empty");
  }
  const bool have_benign = !config.benign_templates.empty();

  // Counts of (mild, severe, violence) per hateful sample.
  struct Pattern {
    int mild, severe, violence;
  };
  std::vector<Pattern> patterns;
  for (const Pattern p : std::initializer_list<Pattern>{
           {1, 0, 0}, {2, 0, 0}, {0, 1, 0}, {1, 1, 0}, {2, 1, 0}, {0, 0, 1}, {1, 0, 1}, {0, 1, 1}}) {
    if ((p.mild > 0 && config.mild.empty()) || (p.severe > 0 && config.severe.empty()) ||
        (p.violence > 0 && config.violence.empty())) {
      continue;
    }
    patterns.push_back(p);
  }
  if (patterns.empty()) {
    // Only reachable with a lexicon whose categories cannot form any pattern.
    patterns.push_back({config.mild.empty() ? 0 : 1, config.severe.empty() ? 0 : 1,
                        config.violence.empty() ? 0 : 1});
  }

  Rng rng(seed);
  std::vector<Sample> samples;
  samples.reserve(config.num_samples);
  for (std::size_t n = 0; n < config.num_samples; ++n) {
    const bool benign = have_benign && rng.uniform() < config.benign_fraction;
    const auto& pool = benign ? config.benign_templates : config.targeted_templates;
    std::vector<std::string> base;
    for (std::size_t k = 0; k < std::max<std::size_t>(1, config.templates_per_sample); ++k) {
      const auto& tpl = pool[rng.below(pool.size())];
      base.insert(base.end(), tpl.begin(), tpl.end());
    }

    std::vector<const PlantedTerm*> planted;
    std::vector<double> weights;
    if (!benign) {
      const Pattern p = patterns[rng.below(patterns.size())];
      for (int i = 0; i < p.mild; ++i) {
        planted.push_back(&config.mild[rng.below(config.mild.size())]);
        weights.push_back(config.mild_weight);
      }
      for (int i = 0; i < p.severe; ++i) {
        planted.push_back(&config.severe[rng.below(config.severe.size())]);
        weights.push_back(config.severe_weight);
      }
      for (int i = 0; i < p.violence; ++i) {
        planted.push_back(&config.violence[rng.below(config.violence.size())]);
        weights.push_back(config.violence_weight);
      }
      // Random order of terms within the sentence.
      for (std::size_t i = planted.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(planted[i - 1], planted[j]);
        std::swap(weights[i - 1], weights[j]);
      }
    }

    // Distinct insertion gaps in [0, base.size()] keep every planted term
    // separated by at least one template token, so each one is its own span.
    std::vector<std::size_t> gaps(base.size() + 1);
    for (std::size_t g = 0; g < gaps.size(); ++g) gaps[g] = g;
    rng.shuffle(gaps);
    gaps.resize(std::min(gaps.size(), planted.size()));
    std::sort(gaps.begin(), gaps.end());

    std::vector<std::string> original, normalized;
    std::vector<Span> spans;
    std::size_t next = 0;
    for (std::size_t g = 0; g <= base.size(); ++g) {
      if (next < gaps.size() && gaps[next] == g) {
        const PlantedTerm& term = *planted[next];
        spans.push_back({original.size(), original.size() + term.tokens.size() - 1});
        original.insert(original.end(), term.tokens.begin(), term.tokens.end());
        normalized.insert(normalized.end(), term.replacement.begin(), term.replacement.end());
        ++next;
      }
      if (g < base.size()) {
        original.push_back(base[g]);
        normalized.push_back(base[g]);
      }
    }

    double total = kMinIntensity;
    for (std::size_t k = 0; k < gaps.size(); ++k) total += weights[k];
    const double intensity = std::clamp(total, kMinIntensity, kMaxIntensity);

    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06zu", n);
    Sample s = Sample::make(id, join_tokens(original), intensity, std::move(spans));
    if (!s.spans.empty()) {
      s.normalized_text = join_tokens(normalized);
      // Replacements carry no weight, so the same rule yields the floor.
      s.normalized_intensity = kMinIntensity;
    }
    if (config.with_engagement) {
      const double log_count = 0.5 + 0.3 * intensity + rng.normal(0.0, 0.3);
      s.engagement = static_cast<std::int64_t>(std::floor(std::exp(log_count)));
    }
    samples.push_back(std::move(s));
  }
  return Corpus(std::move(samples));
}

}  // namespace hatenorm
