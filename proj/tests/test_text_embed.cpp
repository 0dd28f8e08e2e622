// Copyright 2026 The medfuse Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <thread>

// Eigen first: resolv.h, pulled in by httplib, defines a _res macro
#include "medfuse/text_embed.hpp"

#include "httplib.h"
#include "json.hpp"
#include "medfuse/errors.hpp"

namespace medfuse::text {
namespace {

using ad::Matrix;

TEST(EmbeddingStore, SingleEntryFixesDimension) {
  const auto r = parse_embedding_store("MEDFUSE-EMB v1 4\nV1\tChiefComplaint\tAACAPwAAAEAAAEBAAACAQA==\n");
  EXPECT_TRUE(r.rejected.empty());
  EXPECT_EQ(r.store.dim(), 4);
  ASSERT_EQ(r.store.size(), 1u);
  EXPECT_EQ(*r.store.find("V1", "ChiefComplaint"), (std::vector<float>{1, 2, 3, 4}));
  EXPECT_EQ(r.store.find("V1", "PresentIllness"), nullptr);
}

TEST(EmbeddingStore, MixedWidthsFailNamingTheKey) {
  const std::string text =
      "MEDFUSE-EMB v1 4\nV1\tChiefComplaint\tAACAPwAAAEAAAEBAAACAQA==\nV2\tLabText\tAACAPwAAAEAAAEBAAACAQAAAoEA=\n";
  try {
    parse_embedding_store(text);
    FAIL() << "expected a load failure";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("(V2, LabText)"), std::string::npos) << e.what();
  }
  EmbeddingStore store;
  store.insert("V1", "LabText", {1, 2, 3, 4});
  EXPECT_THROW(store.insert("V2", "LabText", {1, 2, 3, 4, 5}), DimensionError);
}

TEST(EmbeddingStore, UnknownSectionRowsAreRejected) {
  const auto r = parse_embedding_store(
      "MEDFUSE-EMB v1 4\nV1\tSocialHistory\tAACAPwAAAEAAAEBAAACAQA==\nV1\tLabText\tAACAPwAAAEAAAEBAAACAQA==\n"
      "V1\tLabText\tnot base64!\n");
  ASSERT_EQ(r.rejected.size(), 2u);
  EXPECT_EQ(r.rejected[0].line, 2u);
  EXPECT_EQ(r.rejected[1].line, 4u);
  EXPECT_EQ(r.store.size(), 1u);
}

TEST(EmbeddingStore, BadHeaderIsAFileError) {
  EXPECT_THROW(parse_embedding_store("EMB 4\n"), FormatError);
  EXPECT_THROW(parse_embedding_store("MEDFUSE-EMB v2 4\n"), FormatError);
  EXPECT_THROW(parse_embedding_store(""), FormatError);
}

TEST(EmbeddingStore, WriteThenReadIsExact) {
  Rng rng(3);
  EmbeddingStore store(7, "unit test");
  const std::vector<std::string> sections = {"ChiefComplaint", "PresentIllness", "MedicalHistory",
                                             "MedicationOnAdmission", "LabText"};
  for (int v = 0; v < 50; ++v) {
    for (const auto& s : sections) {
      if (rng.bernoulli(0.3)) continue;
      std::vector<float> vec(7);
      for (auto& x : vec) x = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform(-30, 30)));
      store.insert("visit-" + std::to_string(v), s, vec);
    }
  }
  const auto back = parse_embedding_store(serialize_embedding_store(store));
  EXPECT_TRUE(back.rejected.empty());
  EXPECT_EQ(back.store.dim(), 7);
  EXPECT_EQ(back.store.provenance(), "unit test");
  EXPECT_EQ(back.store.entries(), store.entries());
}

// ---------------------------------------------------------------------------

EmbeddingStore four_section_store(int dim, Rng& rng) {
  EmbeddingStore store(dim);
  for (const auto s : ehr::kNoteSections) {
    std::vector<float> vec(dim);
    for (auto& x : vec) x = static_cast<float>(rng.normal());
    store.insert("V1", ehr::section_name(s), vec);
  }
  return store;
}

ehr::VisitRecord visit(const std::string& id) {
  ehr::VisitRecord v;
  v.visit_id = id;
  return v;
}

TextProjection identity_projection(int d) {
  TextProjection p;
  p.first.weight = Matrix::Identity(d, d);
  p.first.bias = Matrix::Zero(1, d);
  return p;
}

TEST(TextTokens, IdentityProjectionReturnsStoredVectors) {
  Rng rng(1);
  const auto store = four_section_store(5, rng);
  const auto t = assemble_text_tokens(visit("V1"), store, identity_projection(5));
  ASSERT_EQ(t.tokens.rows(), 5);
  for (int s = 0; s < 4; ++s) {
    EXPECT_TRUE(t.valid[s]);
    const auto& stored = *store.find("V1", ehr::section_name(ehr::kNoteSections[s]));
    for (int j = 0; j < 5; ++j) EXPECT_EQ(t.tokens(s, j), static_cast<double>(stored[j]));
  }
  EXPECT_FALSE(t.valid[4]);  // no LabText entry
  EXPECT_TRUE(t.tokens.row(4).isZero());
}

TEST(TextTokens, NoSectionsGivesZeroPooledAndInvalid) {
  Rng rng(2);
  const auto store = four_section_store(3, rng);
  const auto t = assemble_text_tokens(visit("other"), store, TextProjection(3, 6, 0, rng));
  EXPECT_FALSE(t.any_valid);
  EXPECT_TRUE(t.pooled.isZero());
  EXPECT_TRUE(t.tokens.isZero());
  for (bool v : t.valid) EXPECT_FALSE(v);
}

TEST(TextTokens, PooledIsLoopMeanOfValidTokens) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingStore store(4);
    for (const auto s : {"ChiefComplaint", "PresentIllness", "MedicalHistory", "MedicationOnAdmission", "LabText"}) {
      if (rng.bernoulli(0.4)) continue;
      std::vector<float> vec(4);
      for (auto& x : vec) x = static_cast<float>(rng.normal());
      store.insert("V", s, vec);
    }
    const TextProjection proj(4, 6, trial % 2 ? 5 : 0, rng);
    const auto t = assemble_text_tokens(visit("V"), store, proj);
    std::vector<double> mean(6, 0.0);
    int n = 0;
    for (int r = 0; r < 5; ++r) {
      if (!t.valid[r]) continue;
      ++n;
      for (int j = 0; j < 6; ++j) mean[j] += t.tokens(r, j);
    }
    EXPECT_EQ(t.any_valid, n > 0);
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(t.pooled(j), n ? mean[j] / n : 0.0, 1e-12);
  }
}

TEST(TextTokens, DisabledSourcesAreMaskedOut) {
  Rng rng(5);
  auto store = four_section_store(3, rng);
  store.insert("V1", kLabTextSection, {1, 2, 3});
  TextSources only_labtext;
  only_labtext.use_notes = false;
  const auto raw = gather_text_slots("V1", store, only_labtext);
  EXPECT_EQ(raw.valid, (std::vector<bool>{false, false, false, false, true}));
  TextSources only_notes;
  only_notes.use_labtext = false;
  EXPECT_EQ(gather_text_slots("V1", store, only_notes).valid, (std::vector<bool>{true, true, true, true, false}));
}

TEST(TextTokens, WidthMismatchIsADimensionError) {
  Rng rng(6);
  const auto store = four_section_store(3, rng);
  EXPECT_THROW(assemble_text_tokens(visit("V1"), store, TextProjection(4, 4, 0, rng)), DimensionError);
}

// ---------------------------------------------------------------------------

class CountingProvider : public EmbeddingProvider {
 public:
  explicit CountingProvider(int width) : width_(width) {}
  std::vector<float> embed(const std::string&, const std::string& text) override {
    ++calls;
    return std::vector<float>(width_, static_cast<float>(text.size()));
  }
  int calls = 0;

 private:
  int width_;
};

TEST(EmbeddingClient, RepeatedTextIsServedFromCache) {
  CountingProvider provider(3);
  CachedEmbeddingClient client(provider, 3);
  const auto a = client.request("chest pain");
  EXPECT_EQ(provider.calls, 1);
  const auto b = client.request("chest pain");
  EXPECT_EQ(provider.calls, 1);
  EXPECT_EQ(a, b);
  client.request("fever");
  EXPECT_EQ(provider.calls, 2);
  EXPECT_EQ(client.cache_size(), 2u);
}

TEST(EmbeddingClient, WrongWidthNamesExpectedAndActual) {
  CountingProvider provider(5);
  CachedEmbeddingClient client(provider, 3);
  try {
    client.request("x");
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('5'), std::string::npos) << msg;
    EXPECT_NE(msg.find('3'), std::string::npos) << msg;
  }
  EXPECT_EQ(client.cache_size(), 0u);
}

class LocalServer {
 public:
  explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/embed", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/embed"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(HttpProvider, EchoesIdAndReturnsVector) {
  LocalServer server([](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const auto text = body.at("text").get<std::string>();
    nlohmann::json reply{{"request_id", body.at("request_id")}, {"vector", {double(text.size()), 0.5, -1.0}}};
    res.set_content(reply.dump(), "application/json");
  });
  HttpEmbeddingProvider provider(server.url(), 5.0);
  CachedEmbeddingClient client(provider, 3);
  EXPECT_EQ(client.request("abcd"), (std::vector<float>{4.0f, 0.5f, -1.0f}));
  client.request("abcd");
  EXPECT_EQ(client.provider_calls(), 1u);
}

TEST(HttpProvider, MismatchedIdOrBadBodyIsRetriable) {
  LocalServer wrong_id([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"request_id": "someone-else", "vector": [1, 2]})", "application/json");
  });
  EXPECT_THROW(HttpEmbeddingProvider(wrong_id.url(), 5.0).embed("r1", "t"), RetriableError);
  LocalServer garbage([](const httplib::Request&, httplib::Response& res) { res.set_content("{", "text/plain"); });
  EXPECT_THROW(HttpEmbeddingProvider(garbage.url(), 5.0).embed("r1", "t"), RetriableError);
}

TEST(HttpProvider, UnreachableEndpointIsRetriable) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }  // closed again, nothing listens there now
  HttpEmbeddingProvider provider("http://127.0.0.1:" + std::to_string(port) + "/embed", 1.0);
  CachedEmbeddingClient client(provider, 3);
  EXPECT_THROW(client.request("cold cache"), RetriableError);
}

}  // namespace
}  // namespace medfuse::text
