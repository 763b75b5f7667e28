#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "presencia/app.hpp"

namespace httplib {
class Server;
}

namespace presencia::service {

// 400, 404, 409, 422 or 500.
int http_status(ErrorCode code);

// {"code", "message", "http_status"}
db::Json api_error(ErrorCode code, const std::string& message);

struct TrainJob {
  std::string job_id;
  std::string state = "running";  // running | done | failed
  db::Json metrics;
  db::Json error;
};

// JSON-over-HTTP facade of an App. Routes:
//   POST /api/persons                     GET /api/persons[/{id}]
//   POST /api/persons/{id}/samples        POST /api/persons/{id}/finalize
//   POST /api/train                       GET /api/train/{job_id}
//   POST /api/sessions                    GET /api/sessions[/{id}]
//   POST /api/sessions/{id}/frames        POST /api/sessions/{id}/end
//   GET /api/sessions/{id}/export.csv     GET /api/sessions/{id}/events
//   GET /api/status
class Service {
 public:
  explicit Service(App& app, TrainConfig default_train = {});
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void bind(httplib::Server& server);

  // Blocks until a running training job (if any) has finished.
  void wait_for_training();

 private:
  struct EventLog {
    std::vector<std::string> lines;  // one JSON object per line
    bool closed = false;
  };

  void publish(const std::string& session_id, const attend::RecognitionEvent& ev);
  void close_log(const std::string& session_id);
  std::string start_training(const TrainConfig& config);

  App& app_;
  TrainConfig default_train_;

  std::mutex events_mu_;
  std::condition_variable events_cv_;
  std::map<std::string, EventLog> logs_;

  std::mutex jobs_mu_;
  std::map<std::string, TrainJob> jobs_;
  bool training_ = false;
  std::thread trainer_;
};

}  // namespace presencia::service
