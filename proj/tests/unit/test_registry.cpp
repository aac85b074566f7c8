#include <gtest/gtest.h>

#include <thread>

#include "rescue/registry.hpp"
#include "support/graph_gen.hpp"

using namespace rescue;
using rescue::gen::Rng;

namespace {

const GraphName kTalker("/talker");
const GraphName kListener("/listener");
const GraphName kChatter("/chatter");
const EndpointUri kTalkerApi("http://127.0.0.1:40001/");
const EndpointUri kListenerApi("http://127.0.0.1:40002/");

}  // namespace

TEST(Registry, PublisherThenSubscriber) {
  MasterState s;
  auto pub = register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  EXPECT_TRUE(pub.uris.empty());
  EXPECT_TRUE(pub.updates.empty());

  auto sub = register_subscriber(s, kListener, kListenerApi, kChatter, "std_msgs/String");
  EXPECT_EQ(sub.uris, std::vector{kTalkerApi});

  const SystemState expected{{{"/chatter", {"/talker"}}}, {{"/chatter", {"/listener"}}}, {}};
  EXPECT_EQ(get_system_state(s), expected);
  EXPECT_EQ(get_topic_types(s), (TopicTypes{{"/chatter", "std_msgs/String"}}));
  EXPECT_EQ(find_invariant_violation(s), std::nullopt);
}

TEST(Registry, NewPublisherNotifiesSubscribers) {
  MasterState s;
  register_subscriber(s, kListener, kListenerApi, kChatter, "std_msgs/String");
  auto pub = register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  EXPECT_EQ(pub.uris, std::vector{kListenerApi});
  ASSERT_EQ(pub.updates.size(), 1u);
  EXPECT_EQ(pub.updates[0], (PublisherUpdate{kChatter, {kListenerApi}, {kTalkerApi}}));

  auto un = unregister_publisher(s, kTalker, kTalkerApi, kChatter);
  EXPECT_EQ(un.count, 1);
  ASSERT_EQ(un.updates.size(), 1u);
  EXPECT_TRUE(un.updates[0].publisher_apis.empty());
}

TEST(Registry, UnregisterIsANoOpForWrongUriOrUnknownRegistration) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  const auto before = s;
  EXPECT_EQ(unregister_publisher(s, kTalker, EndpointUri("http://127.0.0.1:1/"), kChatter).count, 0);
  EXPECT_EQ(unregister_publisher(s, kTalker, kTalkerApi, GraphName("/other")).count, 0);
  EXPECT_EQ(unregister_subscriber(s, kTalker, kTalkerApi, kChatter).count, 0);
  EXPECT_EQ(s, before);
  EXPECT_EQ(s.version, before.version);
}

TEST(Registry, RegisterThenUnregisterRestoresTheEmptyState) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  unregister_publisher(s, kTalker, kTalkerApi, kChatter);
  EXPECT_EQ(s, MasterState{});

  register_service(s, kTalker, kTalkerApi, GraphName("/srv"), EndpointUri("rosrpc://127.0.0.1:5000"));
  EXPECT_EQ(unregister_service(s, kTalker, GraphName("/srv"), EndpointUri("rosrpc://127.0.0.1:5001")), 0);
  EXPECT_EQ(unregister_service(s, kTalker, GraphName("/srv"), EndpointUri("rosrpc://127.0.0.1:5000")), 1);
  EXPECT_EQ(s, MasterState{});
}

TEST(Registry, FirstConcreteDatatypeWins) {
  MasterState s;
  register_subscriber(s, kListener, kListenerApi, kChatter, kAnyDatatype);
  EXPECT_EQ(get_topic_types(s), (TopicTypes{{"/chatter", "*"}}));
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  EXPECT_EQ(get_topic_types(s), (TopicTypes{{"/chatter", "std_msgs/String"}}));
  register_publisher(s, GraphName("/other"), EndpointUri("http://127.0.0.1:40003/"), kChatter, "std_msgs/Int32");
  EXPECT_EQ(get_topic_types(s), (TopicTypes{{"/chatter", "std_msgs/String"}}));
  EXPECT_THROW(register_publisher(s, kTalker, kTalkerApi, kChatter, kAnyDatatype), ValidationError);
  EXPECT_THROW(register_subscriber(s, kTalker, kTalkerApi, kChatter, ""), ValidationError);
}

TEST(Registry, ReRegistrationWithNewUriSupersedesTheOldNode) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  register_service(s, kTalker, kTalkerApi, GraphName("/srv"), EndpointUri("rosrpc://127.0.0.1:5000"));
  register_subscriber(s, kListener, kListenerApi, kChatter, "std_msgs/String");

  const EndpointUri restarted("http://127.0.0.1:49999/");
  auto result = register_subscriber(s, kTalker, restarted, GraphName("/other"), "std_msgs/String");
  EXPECT_EQ(lookup_node(s, kTalker), restarted);
  EXPECT_FALSE(lookup_service(s, GraphName("/srv")));
  EXPECT_TRUE(publisher_apis(s, kChatter).empty());
  // The listener is owed an update: its publisher vanished.
  ASSERT_EQ(result.updates.size(), 1u);
  EXPECT_EQ(result.updates[0].topic, kChatter);
  EXPECT_EQ(find_invariant_violation(s), std::nullopt);
}

TEST(Registry, DropNodeRemovesEverything) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  register_subscriber(s, kListener, kListenerApi, kChatter, "std_msgs/String");
  auto updates = drop_node(s, kTalker);
  ASSERT_EQ(updates.size(), 1u);
  EXPECT_EQ(updates[0], (PublisherUpdate{kChatter, {kListenerApi}, {}}));
  EXPECT_FALSE(lookup_node(s, kTalker));
  EXPECT_TRUE(drop_node(s, kTalker).empty());
}

TEST(Registry, ServiceTakeoverPrunesTheOrphanedProvider) {
  MasterState s;
  register_service(s, kTalker, kTalkerApi, GraphName("/srv"), EndpointUri("rosrpc://127.0.0.1:5000"));
  register_service(s, kListener, kListenerApi, GraphName("/srv"), EndpointUri("rosrpc://127.0.0.1:5001"));
  EXPECT_FALSE(lookup_node(s, kTalker));
  EXPECT_EQ(lookup_service(s, GraphName("/srv")), EndpointUri("rosrpc://127.0.0.1:5001"));
}

TEST(Registry, PublishedTopicsFilterBySubgraph) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, GraphName("/ns/a"), "T");
  register_publisher(s, kTalker, kTalkerApi, GraphName("/b"), "T");
  register_subscriber(s, kListener, kListenerApi, GraphName("/ns/c"), "T");
  EXPECT_EQ(get_published_topics(s, "/ns"), (TopicTypes{{"/ns/a", "T"}}));
  EXPECT_EQ(get_published_topics(s, ""), (TopicTypes{{"/b", "T"}, {"/ns/a", "T"}}));
}

TEST(Registry, VersionBumpsOnlyOnChange) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  const auto v = s.version;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  EXPECT_EQ(s.version, v);
  set_param(s, "/a", ParamValue(1));
  set_param(s, "/a", ParamValue(1));
  EXPECT_EQ(s.version, v + 1);
  EXPECT_FALSE(delete_param(s, "/missing"));
  EXPECT_EQ(s.version, v + 1);
}

TEST(Registry, InvariantCheckerCatchesDanglingReferences) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "std_msgs/String");
  auto broken = s;
  broken.nodes.clear();
  EXPECT_TRUE(find_invariant_violation(broken));
  broken = s;
  broken.nodes.emplace(kListener, NodeRecord{kListener, kListenerApi});
  EXPECT_TRUE(find_invariant_violation(broken));
  broken = s;
  broken.topics.at(kChatter).publishers.clear();
  EXPECT_TRUE(find_invariant_violation(broken));
}

TEST(RegistryProperty, ReplayAgainstNaiveModel) {
  Rng rng(20240611);
  for (int run = 0; run < 20; ++run) {
    MasterState state;
    gen::NaiveRegistry model;
    gen::Universe u;
    for (int i = 0; i < 300; ++i) {
      const auto e = gen::random_event(rng, u);
      const auto got = gen::apply(state, e);
      const auto want = model.apply(e);
      ASSERT_EQ(got, want) << "run " << run << " event " << i;
      ASSERT_EQ(gen::compare_with_model(state, model), "") << "run " << run << " event " << i;
    }
  }
}

TEST(RegistryProperty, RegisterUnregisterPairsAreInverse) {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    auto s = gen::random_state(rng);
    const auto before = s;
    const auto n = gen::pick(rng, 20);
    const auto caller = GraphName("/fresh_" + std::to_string(n));
    const EndpointUri api("http://127.0.0.1:" + std::to_string(30000 + n) + "/");
    const auto topic = GraphName("/topic_" + std::to_string(gen::pick(rng, 4)));
    const auto existing_type = s.topics.contains(topic) ? s.topics.at(topic).datatype : "std_msgs/String";
    const auto type = existing_type == kAnyDatatype ? std::string("std_msgs/String") : existing_type;
    if (gen::chance(rng, 0.5)) {
      register_publisher(s, caller, api, topic, type);
      unregister_publisher(s, caller, api, topic);
    } else {
      register_subscriber(s, caller, api, topic, existing_type);
      unregister_subscriber(s, caller, api, topic);
    }
    if (!before.topics.contains(topic) || before.topics.at(topic).datatype != kAnyDatatype) {
      ASSERT_EQ(s, before) << i;
    }
    ASSERT_EQ(find_invariant_violation(s), std::nullopt);
  }
}

TEST(RegistryConcurrency, ListenerSeesStrictlyIncreasingVersions) {
  Registry registry;
  std::mutex mutex;
  std::vector<std::uint64_t> seen;
  registry.set_change_listener([&](const MasterState& s) {
    std::lock_guard lock(mutex);
    seen.push_back(s.version);
  });
  std::vector<std::jthread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      const GraphName node("/n" + std::to_string(t));
      const EndpointUri api("http://127.0.0.1:" + std::to_string(41000 + t) + "/");
      for (int i = 0; i < 100; ++i) {
        registry.register_publisher(node, api, GraphName("/t" + std::to_string(i % 5)), "T");
        registry.unregister_publisher(node, api, GraphName("/t" + std::to_string((i + 2) % 5)));
      }
    });
  }
  threads.clear();
  ASSERT_FALSE(seen.empty());
  for (std::size_t i = 1; i < seen.size(); ++i) ASSERT_LT(seen[i - 1], seen[i]);
  EXPECT_EQ(seen.back(), registry.version());
  EXPECT_EQ(find_invariant_violation(registry.snapshot()), std::nullopt);
}

TEST(RegistryConcurrency, AdoptedStateRestartsVersionAtZero) {
  MasterState s;
  register_publisher(s, kTalker, kTalkerApi, kChatter, "T");
  Registry registry(s);
  EXPECT_EQ(registry.version(), 0u);
  EXPECT_EQ(registry.snapshot(), s);
}
