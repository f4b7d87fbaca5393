#pragma once

#include <string>
#include <string_view>

namespace intentcap {

namespace detail {

// Porter stemmer (Porter 1980), operating on lowercase ASCII words.
class PorterStemmer {
 public:
  static std::string stem(std::string word) {
    if (word.size() <= 2) return word;
    PorterStemmer s(std::move(word));
    s.step1a();
    s.step1b();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5a();
    s.step5b();
    return std::move(s.w_);
  }

 private:
  explicit PorterStemmer(std::string w) : w_(std::move(w)) {}

  bool is_consonant(std::size_t i) const {
    const char c = w_[i];
    if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return false;
    if (c == 'y') return i == 0 ? true : !is_consonant(i - 1);
    return true;
  }

  // Number of VC sequences in the stem w_[0, end).
  int measure(std::size_t end) const {
    int m = 0;
    std::size_t i = 0;
    while (i < end && is_consonant(i)) ++i;
    while (i < end) {
      while (i < end && !is_consonant(i)) ++i;
      if (i >= end) break;
      ++m;
      while (i < end && is_consonant(i)) ++i;
    }
    return m;
  }

  bool has_vowel(std::size_t end) const {
    for (std::size_t i = 0; i < end; ++i)
      if (!is_consonant(i)) return true;
    return false;
  }

  bool ends_with(std::string_view suffix) const {
    return w_.size() >= suffix.size() &&
           std::string_view(w_).substr(w_.size() - suffix.size()) == suffix;
  }

  bool double_consonant_end() const {
    const auto n = w_.size();
    return n >= 2 && w_[n - 1] == w_[n - 2] && is_consonant(n - 1);
  }

  // consonant-vowel-consonant ending where the final consonant is not w, x, y.
  bool cvc_end(std::size_t end) const {
    if (end < 3) return false;
    if (!is_consonant(end - 3) || is_consonant(end - 2) || !is_consonant(end - 1)) return false;
    const char c = w_[end - 1];
    return c != 'w' && c != 'x' && c != 'y';
  }

  std::size_t stem_len(std::string_view suffix) const { return w_.size() - suffix.size(); }

  bool replace(std::string_view suffix, std::string_view repl, int min_measure) {
    if (!ends_with(suffix)) return false;
    const std::size_t base = stem_len(suffix);
    if (measure(base) <= min_measure) return true;  // matched but condition failed
    w_.resize(base);
    w_.append(repl);
    return true;
  }

  void step1a() {
    if (ends_with("sses")) {
      w_.resize(w_.size() - 2);
    } else if (ends_with("ies")) {
      w_.resize(w_.size() - 2);
    } else if (!ends_with("ss") && ends_with("s")) {
      w_.resize(w_.size() - 1);
    }
  }

  void step1b() {
    if (ends_with("eed")) {
      if (measure(stem_len("eed")) > 0) w_.resize(w_.size() - 1);
      return;
    }
    bool stripped = false;
    if (ends_with("ed") && has_vowel(stem_len("ed"))) {
      w_.resize(w_.size() - 2);
      stripped = true;
    } else if (ends_with("ing") && has_vowel(stem_len("ing"))) {
      w_.resize(w_.size() - 3);
      stripped = true;
    }
    if (!stripped) return;
    if (ends_with("at") || ends_with("bl") || ends_with("iz")) {
      w_.push_back('e');
    } else if (double_consonant_end()) {
      const char c = w_.back();
      if (c != 'l' && c != 's' && c != 'z') w_.resize(w_.size() - 1);
    } else if (measure(w_.size()) == 1 && cvc_end(w_.size())) {
      w_.push_back('e');
    }
  }

  void step1c() {
    if (ends_with("y") && has_vowel(w_.size() - 1)) w_.back() = 'i';
  }

  void step2() {
    static constexpr std::pair<std::string_view, std::string_view> rules[] = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
        {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},   {"entli", "ent"},
        {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
        {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
        {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"}};
    for (const auto& [suffix, repl] : rules)
      if (replace(suffix, repl, 0)) return;
  }

  void step3() {
    static constexpr std::pair<std::string_view, std::string_view> rules[] = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
        {"ical", "ic"},  {"ful", ""},   {"ness", ""}};
    for (const auto& [suffix, repl] : rules)
      if (replace(suffix, repl, 0)) return;
  }

  void step4() {
    static constexpr std::string_view suffixes[] = {
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment",
        "ent", "ou", "ism", "ate", "iti", "ous", "ive", "ize"};
    if (ends_with("ion")) {
      const std::size_t base = stem_len("ion");
      if (base >= 1 && (w_[base - 1] == 's' || w_[base - 1] == 't') && measure(base) > 1)
        w_.resize(base);
      return;
    }
    // Longest first so "ement" wins over "ment" over "ent".
    std::string_view best;
    for (auto suffix : suffixes)
      if (ends_with(suffix) && suffix.size() > best.size()) best = suffix;
    if (!best.empty() && measure(stem_len(best)) > 1) w_.resize(stem_len(best));
  }

  void step5a() {
    if (!ends_with("e")) return;
    const std::size_t base = w_.size() - 1;
    const int m = measure(base);
    if (m > 1 || (m == 1 && !cvc_end(base))) w_.resize(base);
  }

  void step5b() {
    if (w_.size() >= 2 && w_.back() == 'l' && double_consonant_end() && measure(w_.size()) > 1)
      w_.resize(w_.size() - 1);
  }

  std::string w_;
};

}  // namespace detail

inline std::string porter_stem(std::string word) {
  return detail::PorterStemmer::stem(std::move(word));
}

}  // namespace intentcap
