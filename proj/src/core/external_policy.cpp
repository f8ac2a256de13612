#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>

#include "metafine/error.hpp"
#include "metafine/policy.hpp"

namespace metafine {

namespace {

json pose_array(const Pose& p) {
  const auto q = quat_wxyz(p.orientation);
  return json::array({p.position.x(), p.position.y(), p.position.z(), q[0], q[1], q[2], q[3]});
}

int major_version(const std::string& v) {
  try {
    return std::stoi(v.substr(0, v.find('.')));
  } catch (const std::exception&) {
    return -1;
  }
}

class ExternalPolicy final : public Policy {
 public:
  ExternalPolicy(const std::vector<std::string>& argv, int chunk, int timeout_ms)
      : chunk_(chunk), timeout_ms_(timeout_ms) {
    if (argv.empty()) fail(ErrorCode::SpawnFailure, "empty command line");
    if (chunk < 1) fail(ErrorCode::InvalidArgument, "chunk size must be at least 1");
    for (const auto& a : argv) id_ += (id_.empty() ? "external:" : " ") + a;
    spawn(argv);
    handshake();
  }

  ~ExternalPolicy() override {
    if (fd_ >= 0) ::close(fd_);
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  std::string id() const override { return id_; }
  int chunk() const override { return chunk_; }
  void reset(const TaskSpec&, const AssetLibrary&, std::uint64_t) override {}

  std::vector<Action> act(const Observation& obs, const WorldState&) override {
    send(observation_message(obs));
    auto line = read_line();
    if (!line) fail(ErrorCode::PolicyProtocolError, id_ + ": no reply within " + std::to_string(timeout_ms_) + " ms");
    json reply;
    try {
      reply = json::parse(*line);
    } catch (const json::exception&) {
      fail(ErrorCode::PolicyProtocolError, id_ + ": reply is not JSON: " + line->substr(0, 80));
    }
    if (!reply.is_object() || reply.value("type", "") != "act" || !reply.contains("actions") ||
        !reply["actions"].is_array())
      fail(ErrorCode::PolicyProtocolError, id_ + ": expected {type:\"act\", actions:[...]}");
    const auto& arr = reply["actions"];
    if (arr.empty() || static_cast<int>(arr.size()) > chunk_)
      fail(ErrorCode::PolicyProtocolError,
           id_ + ": reply carries " + std::to_string(arr.size()) + " actions, chunk is " + std::to_string(chunk_));
    std::vector<Action> out;
    for (const auto& a : arr) out.push_back(action_from_json(a));
    return out;
  }

 private:
  void spawn(const std::vector<std::string>& argv) {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
      fail(ErrorCode::SpawnFailure, std::string("socketpair: ") + std::strerror(errno));
    int status[2];
    if (::pipe2(status, O_CLOEXEC) != 0) {
      ::close(sv[0]);
      ::close(sv[1]);
      fail(ErrorCode::SpawnFailure, std::string("pipe: ") + std::strerror(errno));
    }
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    pid_ = ::fork();
    if (pid_ < 0) fail(ErrorCode::SpawnFailure, std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      ::dup2(sv[1], STDIN_FILENO);
      ::dup2(sv[1], STDOUT_FILENO);
      ::execvp(args[0], args.data());
      const int err = errno;
      [[maybe_unused]] auto n = ::write(status[1], &err, sizeof err);
      ::_exit(127);
    }
    ::close(sv[1]);
    ::close(status[1]);
    fd_ = sv[0];
    int err = 0;
    const auto n = ::read(status[0], &err, sizeof err);
    ::close(status[0]);
    if (n == static_cast<ssize_t>(sizeof err)) {
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
      fail(ErrorCode::SpawnFailure, "cannot execute '" + argv[0] + "': " + std::strerror(err));
    }
  }

  void handshake() {
    send({{"type", "hello"},
          {"protocol_version", kProtocolVersion},
          {"action_spec",
           {{"dims", 7},
            {"layout", {"dx", "dy", "dz", "droll", "dpitch", "dyaw", "grip"}},
            {"translation_unit", "m"},
            {"rotation_unit", "deg"},
            {"max_translation", kMaxStepTranslation},
            {"max_rotation", kMaxStepRotation},
            {"grip", {-1, 0, 1}}}},
          {"chunk", chunk_}});
    auto line = read_line();
    if (!line) fail(ErrorCode::HandshakeTimeout, id_ + ": no acknowledgement within " + std::to_string(timeout_ms_) + " ms");
    json ack;
    try {
      ack = json::parse(*line);
    } catch (const json::exception&) {
      fail(ErrorCode::PolicyProtocolError, id_ + ": handshake reply is not JSON: " + line->substr(0, 80));
    }
    if (!ack.is_object() || ack.value("type", "") != "ack")
      fail(ErrorCode::PolicyProtocolError, id_ + ": expected {type:\"ack\"} during handshake");
    const std::string version = ack.value("protocol_version", "");
    if (major_version(version) != major_version(kProtocolVersion))
      fail(ErrorCode::VersionMismatch,
           id_ + ": policy speaks protocol '" + version + "', engine speaks '" + kProtocolVersion + "'");
  }

  void send(const json& msg) {
    std::string line = msg.dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      const auto n = ::send(fd_, line.data() + off, line.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorCode::PolicyProtocolError, id_ + ": write failed: " + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line() {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::milliseconds(timeout_ms_);
    while (true) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (left <= 0) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left));
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) return std::nullopt;
      char chunk[4096];
      const auto n = ::read(fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return std::nullopt;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  int chunk_;
  int timeout_ms_;
  std::string id_;
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace

json observation_message(const Observation& obs) {
  json poses = json::object();
  for (const auto& [id, p] : obs.poses) poses[id] = pose_array(p);
  return {{"type", "obs"},
          {"step", obs.step},
          {"instruction", obs.instruction},
          {"poses", poses},
          {"joints", obs.joints},
          {"ee", pose_array(obs.ee)},
          {"gripper", obs.gripper_closed ? "closed" : "open"}};
}

json action_json(const Action& a) {
  json arr = json::array();
  for (double d : a.delta) arr.push_back(d);
  arr.push_back(static_cast<int>(a.grip));
  return arr;
}

Action action_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7)
    fail(ErrorCode::PolicyProtocolError, "each action must be an array of 7 numbers");
  Action a;
  for (std::size_t i = 0; i < 7; ++i) {
    if (!j[i].is_number()) fail(ErrorCode::PolicyProtocolError, "action entries must be numbers");
    const double v = j[i].get<double>();
    if (!std::isfinite(v)) fail(ErrorCode::PolicyProtocolError, "action entries must be finite");
    if (i < 6) {
      a.delta[i] = v;
    } else {
      if (v != -1.0 && v != 0.0 && v != 1.0) fail(ErrorCode::PolicyProtocolError, "grip must be -1, 0 or 1");
      a.grip = static_cast<Grip>(static_cast<int>(v));
    }
  }
  return a;
}

std::unique_ptr<Policy> spawn_external(const std::vector<std::string>& argv, int chunk, int timeout_ms) {
  return std::make_unique<ExternalPolicy>(argv, chunk, timeout_ms);
}

}  // namespace metafine
