#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "limcal/backbone.hpp"

namespace limcal {

// Text vocabulary layout of the synthetic task. Id 0 is PAD and doubles as
// the trivial token; it never appears in captions or questions.
namespace vocab {
inline constexpr std::uint32_t kPad = 0;
inline constexpr std::uint32_t kWhat = 1;
inline constexpr std::uint32_t kColor = 2;
inline constexpr std::uint32_t kIs = 3;
inline constexpr std::uint32_t kQuestionMark = 4;
inline constexpr std::uint32_t kShapeBase = 8;
inline constexpr std::uint32_t kColorBase = 32;
// Image vocabulary: 0 is the blank patch, objects are 1 + shape * colors + color.
inline constexpr std::uint32_t kBlankImage = 0;
}  // namespace vocab

enum class Family { in_domain, held_out, mixed };

std::string_view to_string(Family family);
Family parse_family(std::string_view text);

struct TaskConfig {
  std::size_t shapes = 8;
  std::size_t colors = 4;
  std::size_t objects = 4;  // K
  std::size_t slots = 8;    // N, must match the backbone
  // Shapes [0, in_domain_shapes) form the in-domain family; the rest are held out.
  std::size_t in_domain_shapes = 4;

  void validate() const;
  // Backbone vocabularies this task needs.
  std::size_t text_vocab_needed() const;
  std::size_t image_vocab_needed() const;
  std::uint32_t image_token(std::size_t shape, std::size_t color) const;
};

struct SceneObject {
  std::uint32_t shape = 0;
  std::uint32_t color = 0;
};

struct Example {
  TokenIds image_tokens;     // N ids
  TokenIds caption_tokens;   // shape, color pairs
  TokenIds question_tokens;  // what color is <shape> ?
  std::uint32_t answer = 0;  // color id

  TokenIds text() const;
  bool operator==(const Example&) const = default;
};

struct Dataset {
  Family family = Family::in_domain;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool operator==(const Dataset&) const = default;
};

struct DatasetSplit {
  Dataset train, validation, test;
};

struct SplitSizes {
  std::size_t train = 2000;
  std::size_t validation = 500;
  std::size_t test = 1000;
};

// Seed-deterministic generation. Answers are balanced across colors to
// within one example; no example repeats within or across the three splits.
DatasetSplit gen_dataset(std::uint64_t seed, const TaskConfig& task, const SplitSizes& sizes,
                         Family family);

// Reads the answer off the caption alone. Throws ParseError when the caption
// or question is malformed or does not mention the queried shape.
std::uint32_t text_answer_oracle(const Example& example, const TaskConfig& task);

// Reads the answer off the image tokens and the question.
std::uint32_t image_answer_oracle(const Example& example, const TaskConfig& task);

// `img=<ids> cap=<ids> q=<ids> y=<id>` per line, ids comma separated.
std::string format_example(const Example& example);
Example parse_example(std::string_view line);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
// Malformed lines throw ParseError naming the line number.
Dataset load_dataset(const std::filesystem::path& path, Family family = Family::in_domain);

}  // namespace limcal
