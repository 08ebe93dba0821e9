#pragma once

// Per-edge supervision: speed records for regression or a speed-limit class
// for classification, each assigned to one split.

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfn/graph.hpp"
#include "rfn/model.hpp"

namespace rfn {

class DatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Split { train, validation, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct DatasetEntry {
  EdgeId edge = 0;
  Split split = Split::train;
  std::vector<double> speeds;  // regression
  int label = 0;               // classification, a value from Dataset::classes
};

struct Dataset {
  Task task = Task::speed_regression;
  std::vector<DatasetEntry> entries;
  /// Sorted class universe for classification.
  std::vector<int> classes;

  /// Entry positions in a split, in entry order.
  std::vector<std::size_t> indices(Split split) const;
  std::vector<EdgeId> edges(Split split) const;
  /// Position of a label in the class universe.
  std::size_t class_index(int label) const;

  /// Edges exist, entries reference distinct edges, speeds are positive and
  /// every label is in the universe.
  void validate(const RoadNetwork& network) const;
};

/// Arithmetic mean of a segment's records.
double segment_mean(std::span<const double> speeds);

}  // namespace rfn
