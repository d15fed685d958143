#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "forumtrace/error.hpp"
#include "forumtrace/types.hpp"

namespace forumtrace {

/// A use model that passed validate_use_model(). Immutable and cheap to copy;
/// rule lookup is indexed by (from_activity, object_id, kind).
class ValidatedUseModel {
 public:
  const UseModel& model() const { return *model_; }

  std::optional<std::string> rule_target(const std::string& from_activity,
                                         const std::string& object_id,
                                         EventKind kind) const {
    auto it = rules_->find(std::make_tuple(from_activity, object_id, kind));
    if (it == rules_->end()) return std::nullopt;
    return it->second;
  }

 private:
  using RuleKey = std::tuple<std::string, std::string, EventKind>;

  ValidatedUseModel(std::shared_ptr<const UseModel> model,
                    std::shared_ptr<const std::map<RuleKey, std::string>> rules)
      : model_(std::move(model)), rules_(std::move(rules)) {}

  std::shared_ptr<const UseModel> model_;
  std::shared_ptr<const std::map<RuleKey, std::string>> rules_;

  friend ValidatedUseModel validate_use_model(const UseModel& model);
};

inline ValidatedUseModel validate_use_model(const UseModel& model) {
  std::set<std::string> names;
  for (const auto& activity : model.activities) {
    if (activity.name.empty()) {
      throw Error(ErrorCode::UndeclaredActivity, "activity with empty name");
    }
    if (!names.insert(activity.name).second) {
      throw Error(ErrorCode::DuplicateActivity, activity.name);
    }
    if (activity.observables.empty()) {
      throw Error(ErrorCode::EmptyObservables,
                  "activity '" + activity.name + "' has no observable objects");
    }
    for (const auto& obs : activity.observables) {
      if (obs.object.object_id.empty()) {
        throw Error(ErrorCode::EmptyObservables,
                    "activity '" + activity.name + "' has an observable with empty object_id");
      }
      if (obs.events.empty()) {
        throw Error(ErrorCode::EmptyObservables,
                    "object '" + obs.object.object_id + "' in '" + activity.name +
                        "' observes no events");
      }
    }
  }

  std::map<ValidatedUseModel::RuleKey, std::string> rules;
  for (const auto& rule : model.rules) {
    const auto* from = model.find_activity(rule.from_activity);
    if (from == nullptr) {
      throw Error(ErrorCode::UndeclaredActivity, "rule source '" + rule.from_activity + "'");
    }
    if (model.find_activity(rule.to_activity) == nullptr) {
      throw Error(ErrorCode::UndeclaredActivity, "rule target '" + rule.to_activity + "'");
    }
    if (!from->observes(rule.trigger.object_id, rule.trigger.kind)) {
      throw Error(ErrorCode::UnobservableTrigger,
                  "(" + rule.trigger.object_id + ", " + std::string(to_token(rule.trigger.kind)) +
                      ") is not observable in '" + rule.from_activity + "'");
    }
    auto key = std::make_tuple(rule.from_activity, rule.trigger.object_id, rule.trigger.kind);
    if (!rules.emplace(key, rule.to_activity).second) {
      throw Error(ErrorCode::AmbiguousRule,
                  "more than one rule for (" + rule.from_activity + ", " +
                      rule.trigger.object_id + ", " + std::string(to_token(rule.trigger.kind)) +
                      ")");
    }
  }

  if (model.initial_activities.empty()) {
    throw Error(ErrorCode::NoInitialActivity, "no initial activity declared");
  }
  for (const auto& name : model.initial_activities) {
    if (model.find_activity(name) == nullptr) {
      throw Error(ErrorCode::UndeclaredActivity, "initial activity '" + name + "'");
    }
  }

  return ValidatedUseModel(
      std::make_shared<const UseModel>(model),
      std::make_shared<const std::map<ValidatedUseModel::RuleKey, std::string>>(std::move(rules)));
}

namespace detail {

inline ObservableObject observe(std::string id, ObjectClass cls, std::vector<EventKind> kinds) {
  std::sort(kinds.begin(), kinds.end());
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
  return ObservableObject{InteractionObject{std::move(id), cls}, std::move(kinds)};
}

inline ObservableObject page() {
  return observe("page", ObjectClass::Page,
                 {EventKind::Display, EventKind::Scroll, EventKind::Focus, EventKind::Blur,
                  EventKind::Mouseover, EventKind::SessionEnd});
}

inline ObservableObject link(std::string id) {
  return observe(std::move(id), ObjectClass::Hypertext, {EventKind::Click, EventKind::Mouseover});
}

inline ObservableObject button(std::string id) {
  return observe(std::move(id), ObjectClass::Button, {EventKind::Click, EventKind::Mouseover});
}

inline ObservableObject form(std::string id) {
  return observe(std::move(id), ObjectClass::Form,
                 {EventKind::EditText, EventKind::Focus, EventKind::Blur, EventKind::Submit});
}

}  // namespace detail

/// The bundled forum taxonomy: eight activities covering the common forum
/// functions, with click-driven transitions between them. The same model is
/// shipped as data/default_use_model.json.
inline UseModel default_forum_use_model() {
  using detail::button;
  using detail::form;
  using detail::link;
  using detail::observe;
  using detail::page;

  UseModel m;
  m.activities = {
      {"Login", {page(), form("login_form"), button("login_button")}},
      {"DisplayForumIndex",
       {page(), link("thread_link"), link("new_message_link"), link("search_link"),
        link("logout_link")}},
      {"DisplayThread",
       {page(), link("message_link"), link("index_link"), link("new_message_link"),
        link("search_link"), link("logout_link")}},
      {"DisplayMessage",
       {page(), observe("message_image", ObjectClass::Image, {EventKind::Click, EventKind::Mouseover}),
        link("message_link"), link("thread_link"), link("index_link"), link("reply_link"),
        link("logout_link")}},
      {"ComposeMessage",
       {page(), form("message_form"), button("submit_button"), link("index_link")}},
      {"DisplayPostedMessage",
       {page(), link("thread_link"), link("index_link"), link("logout_link")}},
      {"Search",
       {page(), form("search_form"), button("search_button"), link("message_link"),
        link("index_link")}},
      {"Logout", {page(), button("login_button")}},
  };

  auto rule = [](std::string from, std::string object, std::string to) {
    return TransitionRule{std::move(from), Trigger{std::move(object), EventKind::Click}, std::move(to)};
  };
  m.rules = {
      rule("Login", "login_button", "DisplayForumIndex"),
      rule("DisplayForumIndex", "thread_link", "DisplayThread"),
      rule("DisplayForumIndex", "new_message_link", "ComposeMessage"),
      rule("DisplayForumIndex", "search_link", "Search"),
      rule("DisplayForumIndex", "logout_link", "Logout"),
      rule("DisplayThread", "message_link", "DisplayMessage"),
      rule("DisplayThread", "index_link", "DisplayForumIndex"),
      rule("DisplayThread", "new_message_link", "ComposeMessage"),
      rule("DisplayThread", "search_link", "Search"),
      rule("DisplayThread", "logout_link", "Logout"),
      rule("DisplayMessage", "message_link", "DisplayMessage"),
      rule("DisplayMessage", "thread_link", "DisplayThread"),
      rule("DisplayMessage", "index_link", "DisplayForumIndex"),
      rule("DisplayMessage", "reply_link", "ComposeMessage"),
      rule("DisplayMessage", "logout_link", "Logout"),
      rule("ComposeMessage", "submit_button", "DisplayPostedMessage"),
      rule("ComposeMessage", "index_link", "DisplayForumIndex"),
      rule("DisplayPostedMessage", "thread_link", "DisplayThread"),
      rule("DisplayPostedMessage", "index_link", "DisplayForumIndex"),
      rule("DisplayPostedMessage", "logout_link", "Logout"),
      rule("Search", "message_link", "DisplayMessage"),
      rule("Search", "index_link", "DisplayForumIndex"),
      rule("Logout", "login_button", "Login"),
  };
  m.initial_activities = {"Login",          "DisplayForumIndex", "DisplayThread",
                          "DisplayMessage", "ComposeMessage",    "Search"};
  return m;
}

}  // namespace forumtrace
