#include "presencia/service.hpp"

#include <chrono>
#include <ctime>

#include "httplib.h"

namespace presencia::service {

namespace {

using httplib::Request;
using httplib::Response;

void send_json(Response& res, int status, const db::Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, ErrorCode code, const std::string& message) {
  send_json(res, http_status(code), api_error(code, message));
}

db::Json parse_body(const Request& req) {
  if (req.body.empty()) return db::Json::object();
  try {
    db::Json j = db::Json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
    return j;
  } catch (const db::Json::exception& e) {
    throw Error(ErrorCode::BadRequest, std::string("invalid JSON body: ") + e.what());
  }
}

template <typename T>
T field(const db::Json& body, const char* key) {
  if (!body.contains(key)) throw Error(ErrorCode::BadRequest, std::string("missing field '") + key + "'");
  try {
    return body.at(key).get<T>();
  } catch (const db::Json::exception&) {
    throw Error(ErrorCode::BadRequest, std::string("field '") + key + "' has the wrong type");
  }
}

AnyImage decode_frame(const Request& req) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(req.body.data());
  return decode_pnm({p, req.body.size()});
}

// Wraps a handler so every failure leaves as an ApiError body.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const Request& req, Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const db::Json::exception& e) {
      send_error(res, ErrorCode::BadRequest, e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorCode::IoError, e.what());
    }
  };
}

db::Json session_json(const attend::Session& s) { return s.to_json(); }

Timestamp now_utc() { return static_cast<Timestamp>(std::time(nullptr)); }

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::ParseError:
    case ErrorCode::BadRequest:
    case ErrorCode::TypeMismatch:
    case ErrorCode::SchemaViolation:
    case ErrorCode::InvariantViolation:
      return 400;
    case ErrorCode::PersonNotFound:
    case ErrorCode::SessionNotFound:
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::DuplicateId:
    case ErrorCode::AlreadyReady:
    case ErrorCode::InsufficientSamples:
    case ErrorCode::NotEnoughPersons:
    case ErrorCode::ModelsNotReady:
    case ErrorCode::SessionNotRunning:
    case ErrorCode::TrainingInProgress:
      return 409;
    case ErrorCode::InvalidId:
    case ErrorCode::NoFace:
    case ErrorCode::MultipleFaces:
    case ErrorCode::NonMonotoneTimestamp:
    case ErrorCode::ImageTooSmall:
    case ErrorCode::OutOfBounds:
      return 422;
    default:
      return 500;
  }
}

db::Json api_error(ErrorCode code, const std::string& message) {
  return {{"code", std::string(error_code_name(code))}, {"message", message}, {"http_status", http_status(code)}};
}

Service::Service(App& app, TrainConfig default_train) : app_(app), default_train_(default_train) {
  app_.attendance().set_event_listener(
      [this](const std::string& sid, const attend::RecognitionEvent& ev) { publish(sid, ev); });
}

Service::~Service() {
  app_.attendance().set_event_listener({});
  wait_for_training();
  {
    std::lock_guard lock(events_mu_);
    for (auto& [id, log] : logs_) log.closed = true;
  }
  events_cv_.notify_all();
}

void Service::wait_for_training() {
  std::thread t;
  {
    std::lock_guard lock(jobs_mu_);
    t = std::move(trainer_);
  }
  if (t.joinable()) t.join();
}

void Service::publish(const std::string& session_id, const attend::RecognitionEvent& ev) {
  {
    std::lock_guard lock(events_mu_);
    logs_[session_id].lines.push_back(ev.to_json().dump() + "\n");
  }
  events_cv_.notify_all();
}

void Service::close_log(const std::string& session_id) {
  {
    std::lock_guard lock(events_mu_);
    logs_[session_id].closed = true;
  }
  events_cv_.notify_all();
}

std::string Service::start_training(const TrainConfig& config) {
  std::thread previous;
  std::string job_id;
  {
    std::lock_guard lock(jobs_mu_);
    if (training_) throw Error(ErrorCode::TrainingInProgress, "a training job is already running");
    // fail fast on the cheap preconditions; the job re-checks them
    if (app_.store().query(db::Collection::Persons, {{"status", "ready"}}).size() < 2) {
      throw Error(ErrorCode::NotEnoughPersons, "training needs at least two ready persons");
    }
    if (!app_.cascade()) throw Error(ErrorCode::ModelsNotReady, "no face detector installed");
    char buf[32];
    std::snprintf(buf, sizeof buf, "train-%04zu", jobs_.size() + 1);
    job_id = buf;
    jobs_[job_id] = TrainJob{job_id, "running", nullptr, nullptr};
    training_ = true;
    previous = std::move(trainer_);
    trainer_ = std::thread([this, job_id, config] {
      TrainJob result{job_id, "done", nullptr, nullptr};
      try {
        result.metrics = app_.train(config).to_json();
      } catch (const Error& e) {
        result.state = "failed";
        result.error = api_error(e.code(), e.what());
      } catch (const std::exception& e) {
        result.state = "failed";
        result.error = api_error(ErrorCode::IoError, e.what());
      }
      std::lock_guard guard(jobs_mu_);
      jobs_[job_id] = result;
      training_ = false;
    });
  }
  if (previous.joinable()) previous.join();
  return job_id;
}

void Service::bind(httplib::Server& server) {
  server.Get("/api/status", guarded([this](const Request&, Response& res) {
               std::lock_guard lock(jobs_mu_);
               send_json(res, 200,
                         {{"cascade", app_.cascade().has_value()},
                          {"models_ready", app_.models_ready()},
                          {"training", training_}});
             }));

  server.Post("/api/persons", guarded([this](const Request& req, Response& res) {
                const auto body = parse_body(req);
                const auto rec = app_.enrollment().register_person(field<std::string>(body, "id"),
                                                                   field<std::string>(body, "name"));
                send_json(res, 201, rec.to_json());
              }));

  server.Get("/api/persons", guarded([this](const Request&, Response& res) {
               db::Json out = db::Json::array();
               for (const auto& p : app_.enrollment().persons()) out.push_back(p.to_json());
               send_json(res, 200, out);
             }));

  server.Get(R"(/api/persons/([^/]+))", guarded([this](const Request& req, Response& res) {
               const auto p = app_.enrollment().person(req.matches[1]);
               if (!p) throw Error(ErrorCode::PersonNotFound, "no person " + std::string(req.matches[1]));
               send_json(res, 200, p->to_json());
             }));

  server.Post(R"(/api/persons/([^/]+)/samples)", guarded([this](const Request& req, Response& res) {
                const std::string id = req.matches[1];
                if (!app_.enrollment().person(id)) throw Error(ErrorCode::PersonNotFound, "no person " + id);
                const auto result = app_.capture_sample(id, decode_frame(req));
                send_json(res, 200, {{"stored", true}, {"sample_count", result.sample_count}});
              }));

  server.Post(R"(/api/persons/([^/]+)/finalize)", guarded([this](const Request& req, Response& res) {
                send_json(res, 200, app_.enrollment().finalize(req.matches[1]).to_json());
              }));

  server.Post("/api/train", guarded([this](const Request& req, Response& res) {
                const auto body = parse_body(req);
                TrainConfig config = default_train_;
                const TrainConfig parsed = TrainConfig::from_json(body.value("siamese_hyper", db::Json::object()),
                                                                  body.value("head_hyper", db::Json::object()));
                // only fields present in the request override the service defaults
                if (body.contains("siamese_hyper")) {
                  const auto& s = body.at("siamese_hyper");
                  if (s.contains("epochs")) config.siamese.epochs = parsed.siamese.epochs;
                  if (s.contains("lr")) config.siamese.lr = parsed.siamese.lr;
                  if (s.contains("batch")) config.siamese.batch = parsed.siamese.batch;
                  if (s.contains("margin")) config.siamese.margin = parsed.siamese.margin;
                  if (s.contains("seed")) config.siamese.seed = parsed.siamese.seed;
                  if (s.contains("pair_seed")) config.pair_seed = parsed.pair_seed;
                }
                if (body.contains("head_hyper")) {
                  const auto& h = body.at("head_hyper");
                  if (h.contains("epochs")) config.head.epochs = parsed.head.epochs;
                  if (h.contains("lr")) config.head.lr = parsed.head.lr;
                  if (h.contains("hidden")) config.head.hidden = parsed.head.hidden;
                  if (h.contains("batch")) config.head.batch = parsed.head.batch;
                  if (h.contains("seed")) config.head.seed = parsed.head.seed;
                  if (h.contains("theta")) config.head.theta = parsed.head.theta;
                }
                send_json(res, 202, {{"job_id", start_training(config)}});
              }));

  server.Get(R"(/api/train/([^/]+))", guarded([this](const Request& req, Response& res) {
               std::lock_guard lock(jobs_mu_);
               const auto it = jobs_.find(req.matches[1]);
               if (it == jobs_.end()) throw Error(ErrorCode::NotFound, "no training job " + std::string(req.matches[1]));
               const auto& j = it->second;
               db::Json out{{"job_id", j.job_id}, {"state", j.state}, {"metrics", j.metrics}};
               if (!j.error.is_null()) out["error"] = j.error;
               send_json(res, 200, out);
             }));

  server.Post("/api/sessions", guarded([this](const Request& req, Response& res) {
                const auto body = parse_body(req);
                const std::int64_t debounce = body.value("debounce_s", std::int64_t{30});
                const Timestamp start =
                    body.contains("started_at") ? parse_utc(field<std::string>(body, "started_at")) : now_utc();
                const auto s = app_.attendance().start_session(body.value("name", std::string()), debounce, start);
                {
                  std::lock_guard lock(events_mu_);
                  logs_[s.session_id];
                }
                send_json(res, 201, session_json(s));
              }));

  server.Get("/api/sessions", guarded([this](const Request&, Response& res) {
               db::Json out = db::Json::array();
               for (const auto& s : app_.attendance().sessions()) out.push_back(session_json(s));
               send_json(res, 200, out);
             }));

  server.Get(R"(/api/sessions/([^/]+))", guarded([this](const Request& req, Response& res) {
               const std::string id = req.matches[1];
               const auto s = app_.attendance().session(id);
               if (!s) throw Error(ErrorCode::SessionNotFound, "no session " + id);
               db::Json records = db::Json::array();
               for (const auto& r : app_.attendance().records(id)) records.push_back(r.to_json());
               db::Json out = session_json(*s);
               out["records"] = std::move(records);
               send_json(res, 200, out);
             }));

  server.Post(R"(/api/sessions/([^/]+)/frames)", guarded([this](const Request& req, Response& res) {
                const std::string id = req.matches[1];
                if (!req.has_header("X-Timestamp")) throw Error(ErrorCode::BadRequest, "missing X-Timestamp header");
                const Timestamp ts = parse_utc(req.get_header_value("X-Timestamp"));
                if (!app_.attendance().session(id)) throw Error(ErrorCode::SessionNotFound, "no session " + id);
                const AnyImage frame = decode_frame(req);
                db::Json events = db::Json::array();
                for (const auto& ev : app_.attendance().process_frame(id, frame, ts)) events.push_back(ev.to_json());
                send_json(res, 200, {{"events", std::move(events)}});
              }));

  server.Post(R"(/api/sessions/([^/]+)/end)", guarded([this](const Request& req, Response& res) {
                const std::string id = req.matches[1];
                const auto body = parse_body(req);
                std::optional<Timestamp> ended_at;
                if (body.contains("ended_at")) ended_at = parse_utc(field<std::string>(body, "ended_at"));
                const auto summary = app_.attendance().end_session(id, ended_at);
                close_log(id);
                send_json(res, 200,
                          {{"session_id", id},
                           {"persons_marked", summary.persons_marked},
                           {"total_events", summary.total_events},
                           {"export_path", summary.export_path.string()}});
              }));

  server.Get(R"(/api/sessions/([^/]+)/export.csv)", guarded([this](const Request& req, Response& res) {
               res.status = 200;
               res.set_content(app_.attendance().export_csv(req.matches[1]), "text/csv; charset=utf-8");
             }));

  // Newline-delimited JSON, one RecognitionEvent per line. A subscriber gets
  // the events processed after it connected, or everything from index
  // `since` on. The stream ends once the session has ended.
  server.Get(R"(/api/sessions/([^/]+)/events)", guarded([this](const Request& req, Response& res) {
               const std::string id = req.matches[1];
               const auto s = app_.attendance().session(id);
               if (!s) throw Error(ErrorCode::SessionNotFound, "no session " + id);
               std::size_t next = 0;
               {
                 std::lock_guard lock(events_mu_);
                 auto& log = logs_[id];
                 if (s->state != "running") log.closed = true;
                 next = log.lines.size();
               }
               if (req.has_param("since")) next = std::stoul(req.get_param_value("since"));
               auto cursor = std::make_shared<std::size_t>(next);
               res.status = 200;
               res.set_chunked_content_provider(
                   "application/x-ndjson", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
                     std::vector<std::string> batch;
                     bool closed = false;
                     {
                       std::unique_lock lock(events_mu_);
                       events_cv_.wait_for(lock, std::chrono::milliseconds(200), [&] {
                         const auto& log = logs_[id];
                         return log.closed || log.lines.size() > *cursor;
                       });
                       const auto& log = logs_[id];
                       for (; *cursor < log.lines.size(); ++*cursor) batch.push_back(log.lines[*cursor]);
                       closed = log.closed;
                     }
                     for (const auto& line : batch) {
                       if (!sink.write(line.data(), line.size())) return false;
                     }
                     if (closed) {
                       sink.done();
                       return true;
                     }
                     return sink.is_writable();
                   });
             }));
}

}  // namespace presencia::service
