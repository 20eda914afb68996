#include "veritas/conversation.hpp"

#include <algorithm>
#include <functional>
#include <json.hpp>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "veritas/errors.hpp"
#include "veritas/io.hpp"
#include "veritas/rng.hpp"

namespace veritas {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Label label) {
  switch (label) {
    case Label::true_rumour: return "true";
    case Label::false_rumour: return "false";
    case Label::unverified: return "unverified";
    case Label::non_rumour: return "nonrumour";
  }
  return "?";
}

std::string_view to_string(Stance stance) {
  switch (stance) {
    case Stance::support: return "support";
    case Stance::deny: return "deny";
    case Stance::query: return "query";
    case Stance::comment: return "comment";
  }
  return "?";
}

Label parse_label(std::string_view text) {
  for (int k = 0; k < kMaxClasses; ++k) {
    if (to_string(static_cast<Label>(k)) == text) return static_cast<Label>(k);
  }
  throw ParseError("unknown label '" + std::string(text) + "'");
}

Stance parse_stance(std::string_view text) {
  for (auto s : {Stance::support, Stance::deny, Stance::query, Stance::comment}) {
    if (to_string(s) == text) return s;
  }
  throw ParseError("unknown stance '" + std::string(text) + "'");
}

Label label_from_index(int index) {
  if (index < 0 || index >= kMaxClasses) throw DataError("class index " + std::to_string(index) + " out of range");
  return static_cast<Label>(index);
}

const Tweet& ConversationTree::root() const {
  for (const auto& t : tweets) {
    if (t.is_root()) return t;
  }
  throw DataError("tree '" + tree_id + "' has no root");
}

void validate_tree(const ConversationTree& tree) {
  const auto fail = [&](const std::string& what) { throw ParseError("tree '" + tree.tree_id + "': " + what); };
  if (tree.tweets.empty()) fail("no tweets");
  std::unordered_map<std::string, const Tweet*> by_id;
  std::size_t roots = 0;
  for (const auto& t : tree.tweets) {
    if (!by_id.emplace(t.id, &t).second) fail("duplicate tweet id '" + t.id + "'");
    if (t.is_root()) ++roots;
  }
  if (roots == 0) fail("no root tweet");
  if (roots > 1) fail("multiple root tweets");
  for (const auto& t : tree.tweets) {
    if (t.parent_id && !by_id.contains(*t.parent_id)) {
      fail("tweet '" + t.id + "' references missing parent '" + *t.parent_id + "'");
    }
  }
  // With one root and resolvable parents, a tweet is on a cycle iff walking up
  // never reaches the root.
  for (const auto& t : tree.tweets) {
    const Tweet* cur = &t;
    std::size_t hops = 0;
    while (cur->parent_id) {
      cur = by_id.at(*cur->parent_id);
      if (++hops > tree.tweets.size()) fail("cycle through tweet '" + t.id + "'");
    }
  }
}

namespace {

struct TreeIndex {
  std::unordered_map<std::string, std::size_t> position;
  std::vector<std::vector<std::size_t>> children;
  std::size_t root = 0;

  explicit TreeIndex(const ConversationTree& tree) : children(tree.tweets.size()) {
    for (std::size_t i = 0; i < tree.tweets.size(); ++i) position.emplace(tree.tweets[i].id, i);
    for (std::size_t i = 0; i < tree.tweets.size(); ++i) {
      const auto& t = tree.tweets[i];
      if (t.parent_id) children[position.at(*t.parent_id)].push_back(i);
      else root = i;
    }
  }
};

bool earlier(const Tweet& a, const Tweet& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.id < b.id;
}

}  // namespace

std::size_t count_leaves(const ConversationTree& tree) {
  TreeIndex index(tree);
  return static_cast<std::size_t>(
      std::count_if(index.children.begin(), index.children.end(), [](const auto& c) { return c.empty(); }));
}

std::vector<Branch> decompose_branches(const ConversationTree& tree, std::optional<std::size_t> max_length) {
  TreeIndex index(tree);
  std::vector<std::size_t> leaves;
  for (std::size_t i = 0; i < tree.tweets.size(); ++i) {
    if (index.children[i].empty()) leaves.push_back(i);
  }
  std::sort(leaves.begin(), leaves.end(),
            [&](std::size_t a, std::size_t b) { return earlier(tree.tweets[a], tree.tweets[b]); });

  std::vector<Branch> branches;
  branches.reserve(leaves.size());
  for (std::size_t leaf : leaves) {
    std::vector<std::size_t> path{leaf};
    while (tree.tweets[path.back()].parent_id) path.push_back(index.position.at(*tree.tweets[path.back()].parent_id));
    std::reverse(path.begin(), path.end());
    if (max_length && *max_length > 0 && path.size() > *max_length) {
      path.erase(path.begin() + static_cast<std::ptrdiff_t>(*max_length - 1), path.end() - 1);
    }
    Branch b{tree.tree_id, {}};
    b.tweets.reserve(path.size());
    for (std::size_t i : path) b.tweets.push_back(tree.tweets[i]);
    branches.push_back(std::move(b));
  }
  return branches;
}

Timeline timeline_prefixes(const ConversationTree& tree) {
  TreeIndex index(tree);
  std::vector<std::size_t> by_time(tree.tweets.size());
  for (std::size_t i = 0; i < by_time.size(); ++i) by_time[i] = i;
  std::sort(by_time.begin(), by_time.end(),
            [&](std::size_t a, std::size_t b) { return earlier(tree.tweets[a], tree.tweets[b]); });

  Timeline out;
  std::vector<bool> placed(tree.tweets.size(), false);
  std::unordered_map<std::size_t, std::vector<std::size_t>> waiting;  // parent position -> early children
  std::vector<std::size_t> order;

  std::function<void(std::size_t)> place = [&](std::size_t i) {
    placed[i] = true;
    order.push_back(i);
    auto it = waiting.find(i);
    if (it == waiting.end()) return;
    auto kids = std::move(it->second);
    waiting.erase(it);
    for (std::size_t k : kids) place(k);
  };

  for (std::size_t i : by_time) {
    const auto& t = tree.tweets[i];
    if (!t.parent_id) {
      place(i);
      continue;
    }
    const std::size_t parent = index.position.at(*t.parent_id);
    if (placed[parent]) {
      place(i);
    } else {
      out.repairs.push_back({t.id, *t.parent_id});
      waiting[parent].push_back(i);
    }
  }

  std::vector<bool> member(tree.tweets.size(), false);
  out.prefixes.reserve(order.size());
  for (std::size_t i : order) {
    member[i] = true;
    ConversationTree prefix{tree.tree_id, tree.event, tree.label, {}};
    for (std::size_t j = 0; j < tree.tweets.size(); ++j) {
      if (member[j]) prefix.tweets.push_back(tree.tweets[j]);
    }
    out.prefixes.push_back(std::move(prefix));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

ConversationTree tree_from_json(const json& doc, std::size_t line_no) {
  ConversationTree tree;
  const std::string where = "line " + std::to_string(line_no);
  try {
    tree.tree_id = doc.at("tree_id").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": missing or invalid tree_id");
  }
  const auto fail = [&](const std::string& what) {
    throw ParseError(where + ", tree '" + tree.tree_id + "': " + what);
  };
  try {
    tree.event = doc.at("event").get<std::string>();
    const auto label = doc.at("label").get<std::string>();
    try {
      tree.label = parse_label(label);
    } catch (const ParseError&) {
      fail("unknown label '" + label + "'");
    }
    for (const auto& t : doc.at("tweets")) {
      Tweet tw;
      tw.id = t.at("id").get<std::string>();
      if (t.contains("parent_id") && !t.at("parent_id").is_null()) tw.parent_id = t.at("parent_id").get<std::string>();
      tw.timestamp = t.at("timestamp").get<std::int64_t>();
      tw.text = t.at("text").get<std::string>();
      if (t.contains("stance") && !t.at("stance").is_null()) {
        const auto s = t.at("stance").get<std::string>();
        try {
          tw.stance = parse_stance(s);
        } catch (const ParseError&) {
          fail("tweet '" + tw.id + "' has unknown stance '" + s + "'");
        }
      }
      tree.tweets.push_back(std::move(tw));
    }
  } catch (const json::exception& e) {
    fail(e.what());
  }
  try {
    validate_tree(tree);
  } catch (const ParseError& e) {
    throw ParseError(where + ": " + e.what());
  }
  return tree;
}

ordered_json tree_to_json(const ConversationTree& tree) {
  ordered_json doc;
  doc["tree_id"] = tree.tree_id;
  doc["event"] = tree.event;
  doc["label"] = std::string(to_string(tree.label));
  doc["tweets"] = ordered_json::array();
  for (const auto& t : tree.tweets) {
    ordered_json tw;
    tw["id"] = t.id;
    tw["parent_id"] = t.parent_id ? ordered_json(*t.parent_id) : ordered_json(nullptr);
    tw["timestamp"] = t.timestamp;
    tw["text"] = t.text;
    tw["stance"] = t.stance ? ordered_json(std::string(to_string(*t.stance))) : ordered_json(nullptr);
    doc["tweets"].push_back(std::move(tw));
  }
  return doc;
}

}  // namespace

std::vector<ConversationTree> parse_dataset(std::string_view text) {
  std::vector<ConversationTree> trees;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(start, nl - start);
    start = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    auto tree = tree_from_json(doc, line_no);
    if (!seen.insert(tree.tree_id).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate tree_id '" + tree.tree_id + "'");
    }
    trees.push_back(std::move(tree));
  }
  return trees;
}

std::vector<ConversationTree> load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

std::string serialize_dataset(const std::vector<ConversationTree>& trees) {
  std::string out;
  for (const auto& t : trees) {
    out += tree_to_json(t).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::vector<ConversationTree>& trees, const std::string& path) {
  write_file(path, serialize_dataset(trees));
}

int infer_class_count(const std::vector<ConversationTree>& trees) {
  int top = 1;
  for (const auto& t : trees) top = std::max(top, class_index(t.label));
  return top + 1;
}

// ---------------------------------------------------------------------------

std::string_view to_string(FoldScheme scheme) {
  return scheme == FoldScheme::leave_one_event_out ? "leave_one_event_out" : "k_fold";
}

FoldScheme parse_fold_scheme(std::string_view text) {
  if (text == "leave_one_event_out") return FoldScheme::leave_one_event_out;
  if (text == "k_fold") return FoldScheme::k_fold;
  throw ConfigError("unknown fold scheme '" + std::string(text) + "'");
}

int FoldSpec::fold_count() const {
  int top = -1;
  for (const auto& [id, f] : assignments) top = std::max(top, f);
  return top + 1;
}

int FoldSpec::fold_of(const std::string& tree_id) const {
  auto it = assignments.find(tree_id);
  if (it == assignments.end()) throw ConfigError("tree '" + tree_id + "' has no fold assignment");
  return it->second;
}

FoldSpec make_folds(const std::vector<ConversationTree>& trees, FoldScheme scheme, std::optional<int> k,
                    std::uint64_t seed) {
  FoldSpec spec;
  spec.scheme = scheme;
  if (scheme == FoldScheme::leave_one_event_out) {
    std::set<std::string> events;
    for (const auto& t : trees) events.insert(t.event);
    if (events.size() < 2) {
      throw ConfigError("leave_one_event_out needs at least 2 distinct events, found " +
                        std::to_string(events.size()));
    }
    std::map<std::string, int> event_fold;
    for (const auto& e : events) event_fold.emplace(e, static_cast<int>(event_fold.size()));
    for (const auto& t : trees) spec.assignments[t.tree_id] = event_fold.at(t.event);
    return spec;
  }
  if (!k || *k < 2) throw ConfigError("k_fold needs k >= 2");
  std::vector<std::string> ids;
  ids.reserve(trees.size());
  for (const auto& t : trees) ids.push_back(t.tree_id);
  nn::Rng rng(seed);
  nn::shuffle(ids, rng);
  for (std::size_t i = 0; i < ids.size(); ++i) spec.assignments[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(*k));
  return spec;
}

int fold_of_event(const std::vector<ConversationTree>& trees, const FoldSpec& folds, const std::string& event) {
  for (const auto& t : trees) {
    if (t.event == event) return folds.fold_of(t.tree_id);
  }
  throw ConfigError("no tree belongs to event '" + event + "'");
}

std::string fold_spec_to_json(const FoldSpec& folds) {
  ordered_json doc;
  doc["scheme"] = std::string(to_string(folds.scheme));
  doc["assignments"] = ordered_json::object();
  for (const auto& [id, f] : folds.assignments) doc["assignments"][id] = f;
  doc["dev_fold"] = folds.dev_fold ? ordered_json(*folds.dev_fold) : ordered_json(nullptr);
  return doc.dump(2);
}

FoldSpec fold_spec_from_json(std::string_view text) {
  FoldSpec spec;
  try {
    auto doc = json::parse(text);
    spec.scheme = parse_fold_scheme(doc.at("scheme").get<std::string>());
    for (const auto& [id, f] : doc.at("assignments").items()) spec.assignments[id] = f.get<int>();
    if (doc.contains("dev_fold") && !doc.at("dev_fold").is_null()) spec.dev_fold = doc.at("dev_fold").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("fold file: ") + e.what());
  }
  for (const auto& [id, f] : spec.assignments) {
    if (f < 0) throw ParseError("fold file: negative fold index for '" + id + "'");
  }
  return spec;
}

}  // namespace veritas
