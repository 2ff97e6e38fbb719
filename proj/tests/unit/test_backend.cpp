#include <doctest.h>

#include <atomic>
#include <chrono>
#include <sstream>
#include <thread>

#include "forgecap/backend.hpp"
#include "forgecap/digest.hpp"
#include "forgecap/error.hpp"
#include "forgecap/parallel.hpp"
#include "support/synthetic.hpp"

using namespace forgecap;

TEST_SUITE("backend") {
  TEST_CASE("normalize_yes_no follows the leading-token rule") {
    CHECK(normalize_yes_no("Yes, the lighting is off.") == YesNo::Yes);
    CHECK(normalize_yes_no("NO") == YesNo::No);
    CHECK(normalize_yes_no("The image appears authentic.") == YesNo::Invalid);
    CHECK(normalize_yes_no("  ...yes") == YesNo::Yes);
    CHECK(normalize_yes_no("\"No\" - it is sharp") == YesNo::No);
    CHECK(normalize_yes_no("Yesterday it was blurry") == YesNo::Invalid);
    CHECK(normalize_yes_no("Nope") == YesNo::Invalid);
    CHECK(normalize_yes_no("maybe") == YesNo::Invalid);
    CHECK(normalize_yes_no("") == YesNo::Invalid);
    CHECK(normalize_yes_no("?!") == YesNo::Invalid);
  }

  TEST_CASE("normalize_yes_no is idempotent on canonical outputs") {
    for (auto a : {YesNo::Yes, YesNo::No}) CHECK(normalize_yes_no(to_string(a)) == a);
  }

  TEST_CASE("prompt_key is the SHA-256 hex of the prompt") {
    CHECK(prompt_key("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(prompt_key("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("base64 matches RFC 4648 vectors") {
    auto enc = [](std::string_view s) {
      return base64_encode({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foobar") == "Zm9vYmFy");
  }

  TEST_CASE("scripted backend looks up (image_id, prompt) and misses loudly") {
    ScriptedBackend backend("t");
    backend.add("img_001", "Is the image blurry?", "yes");
    const ImageRecord img{"img_001", "a.jpg", Label::Fake, "x", {}};
    const auto reply = backend.ask(img, "Is the image blurry?");
    CHECK(reply.text == "yes");
    CHECK_FALSE(reply.fake_probability.has_value());
    CHECK(backend.ask(img, "Is the image blurry?").text == backend.ask(img, "Is the image blurry?").text);

    try {
      backend.ask(img, "Is the image blurry? ");
      FAIL("expected ScriptMiss");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ScriptMiss);
      CHECK(e.detail().find("img_001") != std::string::npos);
    }
  }

  TEST_CASE("scripted fixture JSONL round-trips and is keyed by prompt hash") {
    ScriptedBackend backend("t");
    backend.add("img_001", "Q?", "no", 0.25);
    backend.add("", "Generate questions", "Is it blurry?");
    std::ostringstream out;
    backend.write(out);
    CHECK(out.str().find(prompt_key("Q?")) != std::string::npos);

    std::istringstream in(out.str());
    const auto loaded = ScriptedBackend::parse(in, "t");
    CHECK(loaded.size() == 2);
    const ImageRecord img{"img_001", "a.jpg", Label::Real, "none", {}};
    const auto r = loaded.ask(img, "Q?");
    CHECK(r.text == "no");
    CHECK(r.fake_probability == doctest::Approx(0.25));
    CHECK(loaded.complete("Generate questions").text == "Is it blurry?");
  }

  TEST_CASE("scripted fixtures validate fake_probability and duplicates") {
    ScriptedBackend backend;
    CHECK_THROWS_AS(backend.add("a", "p", "t", 1.5), Error);
    backend.add("a", "p", "t");
    CHECK_THROWS_AS(backend.add("a", "p", "other"), Error);
  }

  TEST_CASE("config validation") {
    BackendConfig cfg;
    cfg.kind = BackendKind::Remote;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.endpoint = "http://127.0.0.1:1";
    CHECK_NOTHROW(cfg.validate());
    cfg.max_parallel = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    BackendConfig scripted;
    scripted.kind = BackendKind::Scripted;
    CHECK_THROWS_AS(scripted.validate(), Error);
  }

  TEST_CASE("chat request body follows the chat-completions shape") {
    const auto body = chat_request_body("llava", "Is this image real or fake?", "data:image/jpeg;base64,AAAA");
    CHECK(body ==
          R"({"model":"llava","messages":[{"role":"user","content":[{"type":"text","text":"Is this image real or fake?"},)"
          R"({"type":"image_url","image_url":{"url":"data:image/jpeg;base64,AAAA"}}]}],"temperature":0})");
    const auto text_only = chat_request_body("gpt", "hi", std::nullopt);
    CHECK(text_only == R"({"model":"gpt","messages":[{"role":"user","content":[{"type":"text","text":"hi"}]}],"temperature":0})");
  }

  TEST_CASE("parallel_for bounds in-flight calls and covers every index") {
    for (unsigned limit : {1u, 3u, 8u}) {
      std::atomic<int> in_flight{0}, peak{0};
      std::vector<std::atomic<int>> hits(40);
      parallel_for(hits.size(), limit, [&](std::size_t i) {
        const int now = ++in_flight;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
        ++hits[i];
        --in_flight;
      });
      CHECK(peak.load() <= static_cast<int>(limit));
      for (auto& h : hits) CHECK(h.load() == 1);
    }
  }

  TEST_CASE("parallel_for propagates the first exception") {
    std::atomic<int> calls{0};
    CHECK_THROWS_AS(parallel_for(100, 4,
                                 [&](std::size_t i) {
                                   ++calls;
                                   if (i == 5) throw Error(Errc::Timeout, "boom");
                                 }),
                    Error);
    CHECK(calls.load() < 100);
  }

  TEST_CASE("caching backend memoizes replies on disk") {
    struct Counting final : Backend {
      mutable std::atomic<int> calls{0};
      ModelReply ask(const ImageRecord& img, std::string_view p) const override {
        ++calls;
        return {img.image_id + ":" + std::string(p), 0.75, {}};
      }
      ModelReply complete(std::string_view p) const override {
        ++calls;
        return {std::string(p), std::nullopt, {}};
      }
      std::string identity() const override { return "counting"; }
    };
    const auto dir = synthetic::fresh_dir("cache");
    auto inner = std::make_unique<Counting>();
    auto* raw = inner.get();
    CachingBackend cache(std::move(inner), dir);
    const ImageRecord img{"i1", "x.jpg", Label::Real, "none", {}};
    const auto a = cache.ask(img, "Q?");
    const auto b = cache.ask(img, "Q?");
    CHECK(a.text == "i1:Q?");
    CHECK(b.text == a.text);
    CHECK(b.fake_probability == doctest::Approx(0.75));
    CHECK(cache.complete("hello").text == "hello");
    CHECK(cache.complete("hello").text == "hello");
    CHECK(raw->calls.load() == 2);
  }
}
