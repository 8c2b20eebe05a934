#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <thread>

#include "json.hpp"

#include "pmuvar/broadcast.hpp"
#include "pmuvar/detector.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/pipeline.hpp"
#include "pmuvar/serialization.hpp"
#include "pmuvar/training_set.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen's
// product kernels if it is seen first.
#include "httplib.h"

namespace pmuvar {

// Operator API over HTTP. Payloads are JSON except /export/features (CSV)
// and /stream (NDJSON, or server-sent events with ?format=sse).
//
//   GET  /health
//   GET  /config
//   GET  /model
//   GET  /events?since=<id>
//   GET  /events/<id>
//   GET  /cooccurrence
//   GET  /export/features[?operator_only=1]
//   GET  /stream[?format=sse]
//   POST /threshold            {"value": 12, "author": "..."}
//   POST /events/<id>/label    {"class": "spike", "operator": "..."}
class ApiServer {
 public:
  explicit ApiServer(Pipeline& pipeline) : pipeline_(pipeline) { routes(); }

  ~ApiServer() { stop(); }

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }

  // Extended view of one event: stored record plus effective label and history.
  static Json event_view(const EventStore& store, const StoredEvent& e) {
    Json j = to_json(e);
    const EffectiveLabel l = store.effective_label(e.event.id);
    j["model_label"] = j["label"];
    j["label"] = l.label ? Json(to_string(*l.label)) : Json(nullptr);
    j["label_source"] = to_string(l.source);
    Json history = Json::array();
    for (const auto& rec : store.labels_for(e.event.id)) history.push_back(to_json(rec));
    j["label_history"] = std::move(history);
    return j;
  }

 private:
  static void send_json(httplib::Response& res, const Json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, {{"error", message}}, status);
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
    } catch (const FormatError& e) {
      send_error(res, 400, e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  }

  static std::uint64_t parse_id(const std::string& s) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ValidationError("bad event id '" + s + "'");
    }
  }

  void routes() {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      auto snap = pipeline_.snapshot();
      Json j = to_json(*snap);
      j["status"] = "ok";
      j["subscribers"] = pipeline_.broadcaster().subscriber_count();
      send_json(res, j);
    });

    server_.Get("/config", [this](const httplib::Request&, httplib::Response& res) {
      auto snap = pipeline_.snapshot();
      Json j = pipeline_.config().to_json();
      j["threshold"] = snap->threshold;
      j["pending_threshold"] = snap->pending_threshold ? Json(*snap->pending_threshold) : Json(nullptr);
      j["threshold_journal"] = Json::array();
      for (const auto& t : pipeline_.store().threshold_journal()) j["threshold_journal"].push_back(to_json(t));
      send_json(res, j);
    });

    server_.Get("/model", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, pipeline_.model_summary());
    });

    server_.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::uint64_t since = req.has_param("since") ? parse_id(req.get_param_value("since")) : 0;
        Json events = Json::array();
        for (const auto& e : pipeline_.store().events_since(since)) events.push_back(event_view(pipeline_.store(), e));
        send_json(res, {{"events", std::move(events)}});
      });
    });

    server_.Get(R"(/events/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto id = parse_id(req.matches[1]);
        auto e = pipeline_.store().find(id);
        if (!e) throw NotFoundError("no event with id " + std::to_string(id));
        send_json(res, event_view(pipeline_.store(), *e));
      });
    });

    server_.Get("/cooccurrence", [this](const httplib::Request&, httplib::Response& res) {
      std::vector<AnomalyEvent> events;
      for (auto& e : pipeline_.store().events()) events.push_back(std::move(e.event));
      Json rows = Json::array();
      for (const auto& [set, count] : cooccurrence_counts(events)) {
        rows.push_back({{"triggers", set.names()}, {"count", count}});
      }
      send_json(res, {{"cooccurrence", std::move(rows)}});
    });

    server_.Get("/export/features", [this](const httplib::Request& req, httplib::Response& res) {
      const bool operator_only = req.has_param("operator_only") && req.get_param_value("operator_only") == "1";
      std::ostringstream out;
      write_training_csv(out, pipeline_.store().training_rows(operator_only));
      res.set_content(out.str(), "text/csv");
    });

    server_.Post("/threshold", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Json body = Json::parse(req.body);
        if (!body.contains("value") || !body["value"].is_number()) throw ValidationError("body needs a numeric 'value'");
        std::string author = body.value("author", req.get_header_value("X-Operator"));
        const ThresholdChange c = pipeline_.request_threshold(body["value"].get<double>(), author);
        Json j = to_json(c);
        j["accepted"] = true;
        j["effective"] = "next_tick";
        send_json(res, j);
      });
    });

    server_.Post(R"(/events/(\d+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto id = parse_id(req.matches[1]);
        const Json body = Json::parse(req.body);
        if (!body.contains("class") || !body["class"].is_string()) throw ValidationError("body needs a string 'class'");
        std::string op = body.value("operator", req.get_header_value("X-Operator"));
        const LabelRecord l = pipeline_.label_event(id, body["class"].get<std::string>(), op);
        Json j = to_json(l);
        j["accepted"] = true;
        send_json(res, j);
      });
    });

    server_.Get("/stream", [this](const httplib::Request& req, httplib::Response& res) {
      const bool sse = req.has_param("format") && req.get_param_value("format") == "sse";
      auto sub = pipeline_.broadcaster().subscribe();
      auto reported_drops = std::make_shared<std::uint64_t>(0);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          sse ? "text/event-stream" : "application/x-ndjson",
          [sub, sse, reported_drops](std::size_t, httplib::DataSink& sink) {
            auto write = [&](const std::string& type, const std::string& payload) {
              std::string frame = sse ? "event: " + type + "\ndata: " + payload + "\n\n" : payload + "\n";
              return sink.write(frame.data(), frame.size());
            };
            if (!sink.is_writable()) return false;
            auto rec = sub->pop(std::chrono::milliseconds(200));
            const auto drops = sub->dropped_scores();
            if (drops != *reported_drops) {
              *reported_drops = drops;
              if (!write("dropped", Json{{"type", "dropped"}, {"dropped_scores", drops}}.dump())) return false;
            }
            if (!rec) return true;
            static constexpr const char* names[] = {"snapshot", "score", "event_open", "event_close", "threshold", "end"};
            if (!write(names[static_cast<int>(rec->kind)], rec->payload)) return false;
            if (rec->kind == RecordKind::End) sink.done();
            return true;
          });
    });
  }

  Pipeline& pipeline_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace pmuvar
