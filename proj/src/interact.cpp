#include "specex/interact.hpp"

#include "specex/error.hpp"

#include <algorithm>

namespace specex {

std::string_view to_string(InteractionType t) noexcept {
  switch (t) {
    case InteractionType::drag_start:
      return "drag_start";
    case InteractionType::drag_drop:
      return "drag_drop";
    case InteractionType::select:
      return "select";
    case InteractionType::accept:
      return "accept";
    case InteractionType::reject:
      return "reject";
  }
  return "select";
}

InteractionType interaction_type_from_string(std::string_view s) {
  for (auto t : {InteractionType::drag_start, InteractionType::drag_drop, InteractionType::select,
                 InteractionType::accept, InteractionType::reject}) {
    if (to_string(t) == s) return t;
  }
  throw Error("bad_schema", "unknown interaction type " + std::string(s));
}

std::string_view to_string(SemanticLevel l) noexcept {
  switch (l) {
    case SemanticLevel::L1:
      return "L1";
    case SemanticLevel::L2:
      return "L2";
    case SemanticLevel::L3:
      return "L3";
  }
  return "L1";
}

TriggerKind trigger_for(SemanticLevel l) noexcept {
  switch (l) {
    case SemanticLevel::L1:
      return TriggerKind::L1;
    case SemanticLevel::L2:
      return TriggerKind::L2;
    case SemanticLevel::L3:
      return TriggerKind::L3;
  }
  return TriggerKind::L1;
}

nlohmann::json InteractionEvent::to_json() const {
  nlohmann::json payload = nlohmann::json::object();
  if (doc_id) payload["doc_id"] = *doc_id;
  if (source_topic) payload["source_topic"] = *source_topic;
  if (target_topic) payload["target_topic"] = *target_topic;
  if (sandbox_id) payload["sandbox_id"] = *sandbox_id;
  return {{"event_id", event_id},
          {"type", std::string(to_string(type))},
          {"payload", payload},
          {"cursor", cursor},
          {"timestamp", timestamp}};
}

InteractionEvent InteractionEvent::from_json(const nlohmann::json& j) {
  InteractionEvent e;
  try {
    e.event_id = j.at("event_id").get<std::string>();
    e.type = interaction_type_from_string(j.at("type").get<std::string>());
    const auto& p = j.contains("payload") ? j.at("payload") : nlohmann::json::object();
    if (!p.is_object()) throw Error("bad_schema", "interaction payload must be an object");
    auto opt = [&](const char* key) -> std::optional<std::string> {
      if (!p.contains(key) || p[key].is_null()) return std::nullopt;
      return p[key].get<std::string>();
    };
    e.doc_id = opt("doc_id");
    e.source_topic = opt("source_topic");
    e.target_topic = opt("target_topic");
    e.sandbox_id = opt("sandbox_id");
    if (j.contains("cursor")) e.cursor = j["cursor"].get<std::size_t>();
    if (j.contains("timestamp")) e.timestamp = j["timestamp"].get<std::int64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error("bad_schema", std::string("interaction event: ") + ex.what());
  }
  const bool needs_doc = e.type == InteractionType::drag_start || e.type == InteractionType::drag_drop;
  if (needs_doc && !e.doc_id) throw Error("bad_schema", "drag events need payload.doc_id");
  if (e.type == InteractionType::drag_drop && !e.target_topic) {
    throw Error("bad_schema", "drag_drop needs payload.target_topic");
  }
  return e;
}

namespace {

std::size_t trailing_repeats(const PatternState& pattern, std::string_view source, std::string_view target) {
  std::size_t n = 0;
  for (auto it = pattern.moves.rbegin(); it != pattern.moves.rend(); ++it) {
    if (it->source_topic != source || it->target_topic != target) break;
    ++n;
  }
  return n;
}

}  // namespace

SemanticLevel classify_event(const InteractionEvent& event, const PatternState& pattern) {
  switch (event.type) {
    case InteractionType::drag_start:
    case InteractionType::select:
      return SemanticLevel::L1;
    case InteractionType::accept:
    case InteractionType::reject:
      return SemanticLevel::L2;
    case InteractionType::drag_drop:
      break;
  }
  if (!pattern.open_drag_doc || !event.doc_id || *pattern.open_drag_doc != *event.doc_id) {
    throw Error("orphan_drop", "drag_drop without a matching drag_start");
  }
  if (event.source_topic && event.target_topic && pattern.repeat > 0) {
    const auto prior = trailing_repeats(pattern, *event.source_topic, *event.target_topic);
    if (prior + 1 >= pattern.repeat) return SemanticLevel::L3;
  }
  return SemanticLevel::L2;
}

PatternState observe(PatternState pattern, const InteractionEvent& event, const ModelState& state) {
  if (event.type == InteractionType::drag_start) {
    pattern.open_drag_doc = event.doc_id;
  } else if (event.type == InteractionType::drag_drop) {
    pattern.open_drag_doc.reset();
    CompletedMove m;
    m.doc_id = event.doc_id.value_or("");
    m.source_topic = event.source_topic.value_or("");
    m.target_topic = event.target_topic.value_or("");
    if (auto leaf = state.leaf_of(m.doc_id)) m.doc_vector = state.leaf_vector(*leaf);
    pattern.moves.push_back(std::move(m));
    while (pattern.moves.size() > pattern.capacity) pattern.moves.pop_front();
  }
  return pattern;
}

std::vector<DropTarget> rank_drop_targets(const ModelState& state, std::string_view doc_id) {
  const auto leaf = state.leaf_of(doc_id);
  const SparseVector* v = nullptr;
  if (leaf) {
    v = &state.leaf_vector(*leaf);
  } else {
    v = &state.corpus().document(std::string(doc_id)).vector;
  }
  std::vector<DropTarget> out;
  for (const auto& t : state.topic_ids()) out.push_back({t, cosine(*v, state.node(t).centroid)});
  std::stable_sort(out.begin(), out.end(), [](const DropTarget& a, const DropTarget& b) { return a.score > b.score; });
  return out;
}

std::vector<LeafMove> worst_fitting_moves(const ModelState& state, std::size_t limit) {
  struct Candidate {
    double fit;
    std::size_t ingest;
    LeafMove move;
  };
  const auto topics = state.topic_ids();
  std::vector<Candidate> candidates;
  for (const auto& leaf : state.leaf_ids()) {
    const auto& node = state.node(leaf);
    if (node.parent == state.root_id()) continue;
    const auto& v = state.leaf_vector(leaf);
    const double fit = cosine(v, state.node(node.parent).centroid);
    std::string best;
    double best_score = -1.0;
    for (const auto& t : topics) {
      const double s = cosine(v, state.node(t).centroid);
      if (s > best_score) {
        best_score = s;
        best = t;
      }
    }
    if (best.empty() || best == node.parent || best_score <= fit) continue;
    candidates.push_back({fit, state.corpus().document(*node.doc_id).ingest_index, {*node.doc_id, best}});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.fit != b.fit) return a.fit < b.fit;
    return a.ingest < b.ingest;
  });
  std::vector<LeafMove> out;
  for (std::size_t i = 0; i < candidates.size() && i < limit; ++i) out.push_back(candidates[i].move);
  return out;
}

std::vector<LeafMove> pattern_moves(const ModelState& state, std::string_view source_topic,
                                    std::string_view target_topic) {
  std::vector<LeafMove> out;
  if (!state.contains(source_topic) || !state.contains(target_topic) || source_topic == target_topic) return out;
  const auto& src = state.node(source_topic);
  const auto& dst = state.node(target_topic);
  if (src.kind != NodeKind::topic || dst.kind != NodeKind::topic) return out;
  for (const auto& leaf : state.direct_leaves(source_topic)) {
    const auto& v = state.leaf_vector(leaf);
    if (cosine(v, dst.centroid) > cosine(v, src.centroid)) out.push_back({*state.node(leaf).doc_id, std::string(target_topic)});
  }
  return out;
}

std::vector<SpeculationRequest> propose_speculations(SemanticLevel level, const InteractionEvent& event,
                                                     const ModelState& state, const PatternState& pattern) {
  std::vector<SpeculationRequest> out;
  SpeculationRequest r;
  r.level = level;
  r.trigger = trigger_for(level);
  switch (level) {
    case SemanticLevel::L1:
      if (event.doc_id && state.corpus().index_of.contains(*event.doc_id)) {
        r.doc_id = event.doc_id;
        out.push_back(std::move(r));
      }
      break;
    case SemanticLevel::L2:
      if (event.type != InteractionType::drag_drop) break;
      for (auto& m : worst_fitting_moves(state, 3)) {
        SandboxDimensions d;
        d.moves.push_back(std::move(m));
        r.sandboxes.push_back(std::move(d));
      }
      if (!r.sandboxes.empty()) out.push_back(std::move(r));
      break;
    case SemanticLevel::L3: {
      std::string source = event.source_topic.value_or("");
      std::string target = event.target_topic.value_or("");
      if (source.empty() && !pattern.moves.empty()) {
        source = pattern.moves.back().source_topic;
        target = pattern.moves.back().target_topic;
      }
      auto moves = pattern_moves(state, source, target);
      if (!moves.empty()) {
        SandboxDimensions d;
        d.moves = std::move(moves);
        r.sandboxes.push_back(std::move(d));
        out.push_back(std::move(r));
      }
      break;
    }
  }
  return out;
}

}  // namespace specex
