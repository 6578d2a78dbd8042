// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "schedmp/tcp.hpp"
#include "schedmp/transport.hpp"
#include "test_util.hpp"

using namespace schedmp;

namespace {

std::vector<std::unique_ptr<transport_endpoint>> make_inproc(rank_t size) {
  auto fabric = std::make_shared<inproc_fabric>(size);
  std::vector<std::unique_ptr<transport_endpoint>> eps;
  for (rank_t r = 0; r < size; ++r) eps.push_back(std::make_unique<inproc_endpoint>(fabric, r));
  return eps;
}

std::vector<std::unique_ptr<transport_endpoint>> make_tcp(rank_t size) {
  std::vector<tcp_address> addrs(size, tcp_address{"127.0.0.1", 0});
  std::vector<std::unique_ptr<tcp_endpoint>> eps;
  for (rank_t r = 0; r < size; ++r) {
    eps.push_back(std::make_unique<tcp_endpoint>(r, size, addrs[r]));
    addrs[r].port = eps.back()->bound_port();
  }
  for (auto& ep : eps) ep->connect_mesh(addrs);
  std::vector<std::unique_ptr<transport_endpoint>> out;
  for (auto& ep : eps) out.push_back(std::move(ep));
  return out;
}

envelope make_env(rank_t src, rank_t dst, tag_t tag, std::uint64_t len,
                  datatype dt = datatype::byte, context_t ctx = 16) {
  return envelope{ctx, src, dst, tag, dt, len};
}

// Polls rank's endpoint until n frames arrived (TCP delivery is asynchronous).
std::vector<frame> drain_n(transport_endpoint& ep, std::size_t n) {
  std::vector<frame> out;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (out.size() < n) {
    if (auto f = ep.poll()) {
      out.push_back(std::move(*f));
    } else {
      REQUIRE(std::chrono::steady_clock::now() < deadline);
      std::this_thread::yield();
    }
  }
  return out;
}

}  // namespace

TEST_CASE("loopback delivery keeps envelope and payload intact") {
  auto eps = make_inproc(2);
  auto payload = schedmp_test::bytes_of_u32(1);
  envelope env = make_env(0, 1, 7, 4, datatype::int32);
  eps[0]->send(env, payload);

  auto got = drain_n(*eps[1], 1);
  CHECK(got[0].env == env);
  CHECK(got[0].payload == payload);
  CHECK_FALSE(eps[1]->poll().has_value());
}

TEST_CASE("same-tag sends arrive in send order") {
  auto eps = make_inproc(2);
  eps[0]->send(make_env(0, 1, 1, 4, datatype::int32), schedmp_test::bytes_of_u32(11));
  eps[0]->send(make_env(0, 1, 1, 4, datatype::int32), schedmp_test::bytes_of_u32(22));
  auto got = drain_n(*eps[1], 2);
  CHECK(schedmp_test::u32_of_bytes(got[0].payload) == 11);
  CHECK(schedmp_test::u32_of_bytes(got[1].payload) == 22);
}

TEST_CASE("payload length must be a multiple of the element size") {
  auto eps = make_inproc(2);
  std::vector<std::byte> six(6);
  CHECK_THROWS_MATCHES(eps[0]->send(make_env(0, 1, 0, 6, datatype::int32), six), error,
                       Catch::Matchers::Predicate<error>([](const error& e) {
                         return e.code() == errc::invalid_argument;
                       }));
  CHECK(eps[0]->frames_sent() == 0);
}

TEST_CASE("envelope rank bounds are enforced") {
  auto eps = make_inproc(2);
  std::vector<std::byte> one(1);
  CHECK_THROWS_AS(eps[0]->send(make_env(0, 2, 0, 1), one), error);
  CHECK_NOTHROW(eps[0]->send(make_env(0, 0, 0, 1), one));  // self-send is legal
}

TEST_CASE("poll on an idle endpoint returns nothing") {
  auto eps = make_inproc(2);
  CHECK_FALSE(eps[0]->poll().has_value());
  CHECK_FALSE(eps[1]->poll().has_value());
}

TEST_CASE("frames from several sources all arrive, order across sources free") {
  auto eps = make_inproc(4);
  std::set<std::uint32_t> sent;
  for (rank_t src : {2u, 3u}) {
    for (std::uint32_t i = 0; i < 50; ++i) {
      const std::uint32_t v = src * 1000 + i;
      eps[src]->send(make_env(src, 0, 5, 4, datatype::int32), schedmp_test::bytes_of_u32(v));
      sent.insert(v);
    }
  }
  auto got = drain_n(*eps[0], 100);
  std::set<std::uint32_t> received;
  for (auto& f : got) received.insert(schedmp_test::u32_of_bytes(f.payload));
  CHECK(received == sent);
}

TEST_CASE("frame codec is bit-exact") {
  envelope env;
  env.context = 0x01020304;
  env.src = 2;
  env.dst = 3;
  env.tag = -5;
  env.dtype = datatype::float64;
  env.payload_len = 16;

  std::vector<std::byte> payload(16, std::byte{0xAB});
  auto buf = encode_frame(env, payload);
  REQUIRE(buf.size() == 48);

  const unsigned char expected_header[32] = {
      0x45, 0x48, 0x43, 0x53,              // magic 0x53434845, little-endian
      0x04, 0x03, 0x02, 0x01,              // context
      0x02, 0x00, 0x00, 0x00,              // src
      0x03, 0x00, 0x00, 0x00,              // dst
      0xFB, 0xFF, 0xFF, 0xFF,              // tag -5
      0x03, 0x00, 0x00, 0x00,              // dtype float64
      0x10, 0x00, 0x00, 0x00, 0, 0, 0, 0,  // payload_len 16
  };
  for (std::size_t i = 0; i < 32; ++i) {
    INFO("byte " << i);
    CHECK(static_cast<unsigned char>(buf[i]) == expected_header[i]);
  }

  envelope round = decode_frame_header(std::span<const std::byte>(buf.data(), 32));
  CHECK(round == env);
}

TEST_CASE("decode rejects a bad magic") {
  std::vector<std::byte> hdr(32, std::byte{0});
  CHECK_THROWS_AS(decode_frame_header(hdr), error);
}

TEMPLATE_TEST_CASE_SIG("per-stream FIFO over 10000 sequenced messages", "[fifo]",
                       ((bool Tcp), Tcp), (false), (true)) {
  auto eps = Tcp ? make_tcp(2) : make_inproc(2);
  constexpr std::uint32_t n = 10000;
  std::thread sender([&] {
    for (std::uint32_t i = 0; i < n; ++i) {
      // two interleaved streams: tags 0 and 1
      eps[0]->send(make_env(0, 1, static_cast<tag_t>(i % 2), 4, datatype::int32),
                   schedmp_test::bytes_of_u32(i));
    }
  });
  auto got = drain_n(*eps[1], n);
  sender.join();

  std::map<tag_t, std::uint32_t> last;
  std::uint32_t count = 0;
  for (auto& f : got) {
    const std::uint32_t v = schedmp_test::u32_of_bytes(f.payload);
    auto it = last.find(f.env.tag);
    if (it != last.end()) {
      CHECK(v > it->second);  // strictly increasing within a stream
    }
    last[f.env.tag] = v;
    ++count;
  }
  CHECK(count == n);
  CHECK(eps[0]->frames_sent() == n);
  CHECK(eps[1]->frames_delivered() == n);
}

TEST_CASE("tcp and inproc deliver the same multiset with the same stream order") {
  struct script_entry {
    rank_t src, dst;
    tag_t tag;
    std::uint32_t value;
  };
  std::mt19937 rng(1234);
  std::vector<script_entry> script;
  for (std::uint32_t i = 0; i < 400; ++i) {
    script_entry e;
    e.src = rng() % 3;
    e.dst = rng() % 3;
    e.tag = static_cast<tag_t>(rng() % 4);
    e.value = i;
    script.push_back(e);
  }

  auto run = [&](std::vector<std::unique_ptr<transport_endpoint>> eps) {
    std::map<rank_t, std::size_t> expect;
    for (auto& e : script) {
      eps[e.src]->send(make_env(e.src, e.dst, e.tag, 4, datatype::int32),
                       schedmp_test::bytes_of_u32(e.value));
      expect[e.dst]++;
    }
    // delivered values per (dst, src, tag) stream, in order
    std::map<std::tuple<rank_t, rank_t, tag_t>, std::vector<std::uint32_t>> streams;
    for (rank_t r = 0; r < 3; ++r) {
      for (auto& f : drain_n(*eps[r], expect[r])) {
        streams[{r, f.env.src, f.env.tag}].push_back(schedmp_test::u32_of_bytes(f.payload));
      }
    }
    return streams;
  };

  auto inproc_streams = run(make_inproc(3));
  auto tcp_streams = run(make_tcp(3));
  CHECK(inproc_streams == tcp_streams);
}

TEST_CASE("send after close reports a closed transport") {
  auto eps = make_inproc(2);
  eps[0]->close_outbound();
  std::vector<std::byte> one(1);
  CHECK_THROWS_MATCHES(eps[0]->send(make_env(0, 1, 0, 1), one), error,
                       Catch::Matchers::Predicate<error>([](const error& e) {
                         return e.code() == errc::transport_closed;
                       }));
}

TEST_CASE("tcp frames survive the real socket path") {
  auto eps = make_tcp(3);
  std::mt19937 rng(7);
  auto payload = schedmp_test::random_vector<std::int64_t>(rng, 128);
  std::vector<std::byte> bytes(payload.size() * 8);
  std::memcpy(bytes.data(), payload.data(), bytes.size());

  eps[2]->send(make_env(2, 0, 42, bytes.size(), datatype::int64), bytes);
  auto got = drain_n(*eps[0], 1);
  CHECK(got[0].env.src == 2);
  CHECK(got[0].env.tag == 42);
  CHECK(got[0].payload == bytes);
}

TEST_CASE("conservation: every frame sent is delivered exactly once") {
  auto eps = make_inproc(4);
  std::vector<std::thread> senders;
  constexpr std::uint32_t per_pair = 250;
  for (rank_t src = 0; src < 4; ++src) {
    senders.emplace_back([&, src] {
      for (rank_t dst = 0; dst < 4; ++dst) {
        for (std::uint32_t i = 0; i < per_pair; ++i) {
          eps[src]->send(make_env(src, dst, 0, 4, datatype::int32),
                         schedmp_test::bytes_of_u32(i));
        }
      }
    });
  }
  for (auto& t : senders) t.join();

  std::uint64_t sent = 0, delivered = 0;
  for (rank_t r = 0; r < 4; ++r) {
    (void)drain_n(*eps[r], 4 * per_pair);
    sent += eps[r]->frames_sent();
    delivered += eps[r]->frames_delivered();
  }
  CHECK(sent == 4ull * 4 * per_pair);
  CHECK(delivered == sent);
}
