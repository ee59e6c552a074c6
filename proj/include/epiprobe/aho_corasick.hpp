#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace epiprobe {

// Byte-level Aho-Corasick automaton compiled to a full transition table.
// Patterns are matched exactly as given; callers fold case beforehand.
class AhoCorasick {
 public:
  struct Match {
    std::size_t pattern;
    std::size_t end;  // one past the last matched byte
  };

  explicit AhoCorasick(const std::vector<std::string>& patterns) : lengths_(patterns.size()) {
    if (patterns.empty()) throw PreconditionError("aho-corasick: no patterns");
    new_state();
    for (std::size_t p = 0; p < patterns.size(); ++p) {
      if (patterns[p].empty()) throw PreconditionError("aho-corasick: empty pattern");
      lengths_[p] = patterns[p].size();
      std::int32_t s = 0;
      for (unsigned char c : patterns[p]) {
        if (next_[s][c] < 0) {
          const auto t = new_state();
          next_[s][c] = t;
        }
        s = next_[s][c];
      }
      out_[s].push_back(p);
    }
    // BFS: fill fail links and complete the transition table
    std::deque<std::int32_t> queue;
    for (int c = 0; c < 256; ++c) {
      auto& t = next_[0][c];
      if (t < 0) {
        t = 0;
      } else {
        fail_[t] = 0;
        queue.push_back(t);
      }
    }
    while (!queue.empty()) {
      const auto s = queue.front();
      queue.pop_front();
      const auto& inherited = out_[fail_[s]];
      out_[s].insert(out_[s].end(), inherited.begin(), inherited.end());
      for (int c = 0; c < 256; ++c) {
        auto& t = next_[s][c];
        if (t < 0) {
          t = next_[fail_[s]][c];
        } else {
          fail_[t] = next_[fail_[s]][c];
          queue.push_back(t);
        }
      }
    }
  }

  std::size_t pattern_count() const { return lengths_.size(); }
  std::size_t pattern_length(std::size_t p) const { return lengths_[p]; }
  std::size_t state_count() const { return next_.size(); }

  // Calls on_match(Match) for every occurrence, in order of end position.
  template <typename F>
  void scan(std::string_view text, F&& on_match) const {
    std::int32_t s = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
      s = next_[s][static_cast<unsigned char>(text[i])];
      for (auto p : out_[s]) on_match(Match{p, i + 1});
    }
  }

 private:
  std::int32_t new_state() {
    std::array<std::int32_t, 256> row;
    row.fill(-1);
    next_.push_back(row);
    fail_.push_back(0);
    out_.emplace_back();
    return static_cast<std::int32_t>(next_.size() - 1);
  }

  std::vector<std::array<std::int32_t, 256>> next_;
  std::vector<std::int32_t> fail_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::size_t> lengths_;
};

}  // namespace epiprobe
