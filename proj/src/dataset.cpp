#include "rfn/dataset.hpp"

#include <algorithm>
#include <numeric>

namespace rfn {

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "validation" || text == "val") return Split::validation;
  if (text == "test") return Split::test;
  throw DatasetError("unknown split '" + text + "'");
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

std::vector<EdgeId> Dataset::edges(Split split) const {
  std::vector<EdgeId> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e.edge);
  return out;
}

std::size_t Dataset::class_index(int label) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label)
    throw DatasetError("label " + std::to_string(label) + " is not in the class universe");
  return static_cast<std::size_t>(it - classes.begin());
}

void Dataset::validate(const RoadNetwork& network) const {
  std::vector<char> seen(network.edge_count(), 0);
  for (const auto& e : entries) {
    if (e.edge >= network.edge_count())
      throw DatasetError("dataset references unknown edge " + std::to_string(e.edge));
    if (seen[e.edge]) throw DatasetError("edge " + network.edges()[e.edge].id + " listed twice");
    seen[e.edge] = 1;
    if (task == Task::speed_regression) {
      if (e.speeds.empty())
        throw DatasetError("edge " + network.edges()[e.edge].id + " has no speed records");
      for (double s : e.speeds)
        if (!(s > 0.0))
          throw DatasetError("edge " + network.edges()[e.edge].id + ": speeds must be positive");
    } else {
      class_index(e.label);
    }
  }
  if (task == Task::limit_classification &&
      !std::is_sorted(classes.begin(), classes.end()))
    throw DatasetError("class universe must be sorted");
}

double segment_mean(std::span<const double> speeds) {
  if (speeds.empty()) throw DatasetError("mean of an empty record set");
  return std::accumulate(speeds.begin(), speeds.end(), 0.0) / static_cast<double>(speeds.size());
}

}  // namespace rfn
