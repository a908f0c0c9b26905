#pragma once

// Interaction events, their semantic level, and the speculation each level
// asks for. L1 = a drag has started, L2 = a move was completed, L3 = the same
// (source, target) move repeated R times in a row.

#include "specex/engine.hpp"
#include "specex/ihtm.hpp"

#include <json.hpp>

#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace specex {

enum class InteractionType { drag_start, drag_drop, select, accept, reject };
std::string_view to_string(InteractionType t) noexcept;
InteractionType interaction_type_from_string(std::string_view s);

enum class SemanticLevel { L1, L2, L3 };
std::string_view to_string(SemanticLevel l) noexcept;
TriggerKind trigger_for(SemanticLevel l) noexcept;

struct InteractionEvent {
  std::string event_id;
  InteractionType type = InteractionType::select;
  std::optional<std::string> doc_id;
  std::optional<std::string> source_topic;
  std::optional<std::string> target_topic;
  std::optional<std::string> sandbox_id;  // accept / reject events
  std::size_t cursor = 0;
  std::int64_t timestamp = 0;  // ms, client supplied

  nlohmann::json to_json() const;
  static InteractionEvent from_json(const nlohmann::json& j);
};

struct CompletedMove {
  std::string source_topic;
  std::string target_topic;
  std::string doc_id;
  SparseVector doc_vector;
};

struct PatternState {
  std::size_t capacity = 10;
  std::size_t repeat = 3;
  std::deque<CompletedMove> moves;  // oldest first
  std::optional<std::string> open_drag_doc;
};

// Pure in (event, pattern). Throws Error("orphan_drop") for a drag_drop with
// no open drag of the same document.
SemanticLevel classify_event(const InteractionEvent& event, const PatternState& pattern);

// Records drag_start / drag_drop in the pattern buffer.
PatternState observe(PatternState pattern, const InteractionEvent& event, const ModelState& state);

struct DropTarget {
  std::string topic_id;
  double score = 0.0;
};

// All topics by cosine(doc, centroid), descending; ties by node id.
std::vector<DropTarget> rank_drop_targets(const ModelState& state, std::string_view doc_id);

struct SpeculationRequest {
  SemanticLevel level = SemanticLevel::L1;
  TriggerKind trigger = TriggerKind::L1;
  std::optional<std::string> doc_id;           // L1: the dragged document
  std::vector<SandboxDimensions> sandboxes;    // L2 / L3
};

// Leaves fitting their parent worst, restricted to those whose best topic is
// another one; at most `limit` moves, worst first.
std::vector<LeafMove> worst_fitting_moves(const ModelState& state, std::size_t limit);

// Every leaf directly under source whose cosine to target beats its cosine to source.
std::vector<LeafMove> pattern_moves(const ModelState& state, std::string_view source_topic,
                                    std::string_view target_topic);

std::vector<SpeculationRequest> propose_speculations(SemanticLevel level, const InteractionEvent& event,
                                                     const ModelState& state, const PatternState& pattern);

}  // namespace specex
