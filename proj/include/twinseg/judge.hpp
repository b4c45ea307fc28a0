#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/http_client.hpp"
#include "twinseg/rollout.hpp"

namespace twinseg {

inline constexpr std::string_view kJudgeTemplateId = "judge_reasoning_v1";

// Must match prompts/judge_reasoning_v1.txt byte for byte.
inline constexpr std::string_view kJudgeTemplateV1 =
    "You are grading the reasoning a student model wrote for a segmentation query.\n"
    "A teacher model answered the same query; its reasoning is the reference.\n"
    "Check whether the student's steps follow from one another, whether they cover the points\n"
    "the teacher relied on, and whether the conclusions they reach are correct.\n"
    "\n"
    "Teacher reasoning:\n"
    "{{teacher_reason}}\n"
    "\n"
    "Student reasoning:\n"
    "{{student_reason}}\n"
    "\n"
    "Give a brief justification, then finish with one line of the form \"Score: <x>\",\n"
    "where <x> is a number from 0 to 1 and 1 means the student's reasoning matches the reference in quality.\n";

struct JudgeConfig {
  Endpoint endpoint;
  double temperature = 0.3;
  int max_tokens = 512;
  std::string template_id = std::string(kJudgeTemplateId);
  std::string template_text = std::string(kJudgeTemplateV1);
  int max_attempts = 3;
  int backoff_ms = 200;  // base delay; doubles per retry, with jitter

  void validate() const {
    if (temperature < 0.0) throw ValidationError("judge.temperature", "must be >= 0");
    if (max_tokens <= 0) throw ValidationError("judge.max_tokens", "must be > 0");
    if (max_attempts < 1) throw ValidationError("judge.max_attempts", "must be >= 1");
  }
};

struct JudgeRequest {
  std::string student_reason;
  std::string teacher_reason;
  std::string prompt;  // rendered template
  double temperature = 0.3;
  int max_tokens = 512;
};

// Returns the judge's raw reply text; throws BackendError when unreachable.
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string reply(const JudgeRequest& req) = 0;
  virtual std::string name() const = 0;
};

inline std::string render_judge_prompt(std::string_view tmpl, std::string_view student, std::string_view teacher) {
  std::string out(tmpl);
  auto replace = [&](std::string_view key, std::string_view value) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size())) {
      out.replace(pos, key.size(), value);
    }
  };
  replace("{{teacher_reason}}", teacher);
  replace("{{student_reason}}", student);
  return out;
}

// Lowercased alphanumeric tokens.
inline std::vector<std::string> judge_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Multiset token-overlap F1; 1.0 when both texts have no tokens.
inline double token_overlap_f1(std::string_view a, std::string_view b) {
  const auto ta = judge_tokens(a), tb = judge_tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  if (ta.empty() || tb.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : tb) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : ta) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return 2.0 * static_cast<double>(common) / static_cast<double>(ta.size() + tb.size());
}

inline std::string format_score(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return buf;
}

// Offline judge: replies with the token-overlap F1 of the two reason texts.
class OverlapJudge : public JudgeBackend {
 public:
  std::string reply(const JudgeRequest& req) override {
    return "Token overlap with the reference.\nScore: " + format_score(token_overlap_f1(req.student_reason, req.teacher_reason));
  }
  std::string name() const override { return "overlap"; }
};

// Serves canned replies in order (then repeats the last); "!fail" entries
// raise BackendError. For tests.
class ScriptedJudge : public JudgeBackend {
 public:
  explicit ScriptedJudge(std::vector<std::string> replies) : replies_(replies.begin(), replies.end()) {}

  std::string reply(const JudgeRequest&) override {
    std::lock_guard lock(mu_);
    ++calls_;
    if (replies_.empty()) throw BackendError("scripted judge has no replies");
    std::string r = replies_.front();
    if (replies_.size() > 1) replies_.pop_front();
    if (r == "!fail") throw BackendError("scripted failure");
    return r;
  }
  std::string name() const override { return "scripted"; }
  int calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  mutable std::mutex mu_;
  std::deque<std::string> replies_;
  int calls_ = 0;
};

class HttpJudge : public JudgeBackend {
 public:
  explicit HttpJudge(Endpoint ep) : client_(std::move(ep)) {}

  std::string reply(const JudgeRequest& req) override {
    ChatRequest chat;
    chat.messages.push_back({"user", req.prompt});
    chat.temperature = req.temperature;
    chat.max_tokens = req.max_tokens;
    return client_.complete(chat).content;
  }
  std::string name() const override { return "http:" + client_.endpoint().base_url; }

 private:
  ChatClient client_;
};

// Score from a judge reply: the number after the last "Score:" label if
// present, else the last number of the form [01](.digits)?; clamped to [0,1].
inline std::optional<double> extract_judge_score(std::string_view reply) {
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  struct Num {
    std::size_t pos;
    std::string text;
  };
  std::vector<Num> nums;
  for (std::size_t i = 0; i < reply.size();) {
    if (!is_digit(reply[i]) || (i > 0 && (is_digit(reply[i - 1]) || reply[i - 1] == '.'))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < reply.size() && is_digit(reply[j])) ++j;
    if (j + 1 < reply.size() && reply[j] == '.' && is_digit(reply[j + 1])) {
      ++j;
      while (j < reply.size() && is_digit(reply[j])) ++j;
    }
    nums.push_back({i, std::string(reply.substr(i, j - i))});
    i = j;
  }
  auto eligible = [](const std::string& s) { return (s[0] == '0' || s[0] == '1') && (s.size() == 1 || s[1] == '.'); };
  auto clamp = [](double v) { return std::clamp(v, 0.0, 1.0); };

  std::string lowered(reply);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (const auto label = lowered.rfind("score:"); label != std::string::npos) {
    std::size_t p = label + 6;
    while (p < reply.size() && (reply[p] == ' ' || reply[p] == '\t')) ++p;
    for (const auto& n : nums) {
      if (n.pos == p && eligible(n.text)) return clamp(std::stod(n.text));
    }
  }
  for (auto it = nums.rbegin(); it != nums.rend(); ++it) {
    if (eligible(it->text)) return clamp(std::stod(it->text));
  }
  return std::nullopt;
}

// Asks the judge to grade `student` against `teacher`. Retries transport
// failures and unparseable replies up to config.max_attempts, then throws
// BackendError.
inline double reasoning_reward(std::string_view student, std::string_view teacher, JudgeBackend& judge,
                               const JudgeConfig& config) {
  config.validate();
  JudgeRequest req;
  req.student_reason = std::string(student);
  req.teacher_reason = std::string(teacher);
  req.prompt = render_judge_prompt(config.template_text, student, teacher);
  req.temperature = config.temperature;
  req.max_tokens = config.max_tokens;
  thread_local std::mt19937 jitter_rng{std::random_device{}()};
  std::string last_error;
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    if (attempt > 0 && config.backoff_ms > 0) {
      const int base = config.backoff_ms << std::min(attempt - 1, 6);
      std::uniform_int_distribution<int> jitter(0, base);
      std::this_thread::sleep_for(std::chrono::milliseconds(base / 2 + jitter(jitter_rng) / 2));
    }
    try {
      const std::string reply = judge.reply(req);
      if (auto score = extract_judge_score(reply)) return *score;
      last_error = "unparseable judge reply";
    } catch (const BackendError& e) {
      last_error = e.what();
    }
  }
  throw BackendError("judge " + judge.name() + " failed after " + std::to_string(config.max_attempts) +
                     " attempts: " + last_error);
}

inline double reasoning_reward(const RolloutSequence& student, const RolloutSequence& teacher, JudgeBackend& judge,
                               const JudgeConfig& config) {
  return reasoning_reward(student.reason, teacher.reason, judge, config);
}

}  // namespace twinseg
