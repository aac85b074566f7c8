#include <gtest/gtest.h>

#include "rescue/xmlrpc.hpp"

using namespace rescue::xmlrpc;

TEST(XmlRpc, CallRoundTrip) {
  const Array params{Value("/talker"), Value(42), Value(true), Value(-0.25), Value(Array{Value("a"), Value(1)}),
                     Value(Struct{{"k", Value("v")}, {"n", Value(Nil{})}})};
  const auto call = parse_call(encode_call("registerPublisher", params));
  EXPECT_EQ(call.method, "registerPublisher");
  EXPECT_EQ(call.params, params);
}

TEST(XmlRpc, ResponseRoundTrip) {
  const Value triple(Array{Value(1), Value("ok"), Value(Array{Value("http://h:1/")})});
  EXPECT_EQ(parse_response(encode_response(triple)), triple);
}

TEST(XmlRpc, EscapesMarkup) {
  const Value v("<tag> & \"quotes\" 'apos'");
  EXPECT_EQ(parse_response(encode_response(v)), v);
  EXPECT_EQ(encode_value(v).find("<tag>"), std::string::npos);
}

TEST(XmlRpc, LargeIntegersUseI8) {
  const Value big(std::int64_t{1} << 40);
  EXPECT_NE(encode_value(big).find("<i8>"), std::string::npos);
  EXPECT_EQ(parse_response(encode_response(big)), big);
  EXPECT_NE(encode_value(Value(7)).find("<i4>"), std::string::npos);
}

TEST(XmlRpc, AcceptsForeignEncodings) {
  const std::string xml =
      "<?xml version='1.0'?>\n<methodCall>\n<methodName>getPid</methodName>\n<params>\n"
      "<param><value>/untyped</value></param>\n"
      "<param><value><int>-3</int></value></param>\n"
      "<param><value><boolean>1</boolean></value></param>\n"
      "<param><value><double>1e3</double></value></param>\n"
      "<param><value><string></string></value></param>\n"
      "<param><value></value></param>\n"
      "<param><value><array><data></data></array></value></param>\n"
      "</params>\n</methodCall>\n";
  const auto call = parse_call(xml);
  EXPECT_EQ(call.method, "getPid");
  EXPECT_EQ(call.params, (Array{Value("/untyped"), Value(-3), Value(true), Value(1000.0), Value(""), Value(""),
                                Value(Array{})}));
}

TEST(XmlRpc, CallWithoutParams) {
  const auto call = parse_call("<?xml version=\"1.0\"?><methodCall><methodName>getPid</methodName></methodCall>");
  EXPECT_EQ(call.method, "getPid");
  EXPECT_TRUE(call.params.empty());
}

TEST(XmlRpc, FaultsThrow) {
  try {
    parse_response(encode_fault(-32601, "no such method"));
    FAIL();
  } catch (const Fault& f) {
    EXPECT_EQ(f.code(), -32601);
    EXPECT_STREQ(f.what(), "no such method");
  }
}

TEST(XmlRpc, RejectsMalformedDocuments) {
  for (const char* bad :
       {"", "not xml", "<methodCall>", "<methodCall><params></params></methodCall>",
        "<methodCall><methodName>x</methodName><params><param><value><int>abc</int></value></param></params></methodCall>",
        "<methodCall><methodName>x</methodName><params><param><value><boolean>2</boolean></value></param></params>"
        "</methodCall>",
        "<methodCall><methodName>x</methodName><params><param><value><i4>1</value></param></params></methodCall>"}) {
    EXPECT_THROW(parse_call(bad), ParseError) << bad;
  }
  EXPECT_THROW(parse_response("<methodResponse><params></params></methodResponse>"), ParseError);
}

TEST(XmlRpc, DoublesRoundTripExactly) {
  for (double d : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5e17}) {
    EXPECT_EQ(parse_response(encode_response(Value(d))), Value(d)) << d;
  }
  EXPECT_ANY_THROW(encode_value(Value(std::numeric_limits<double>::infinity())));
}

TEST(XmlRpc, AccessorsCheckTypes) {
  const Value v(5);
  EXPECT_TRUE(v.is<std::int64_t>());
  EXPECT_THROW(v.as<std::string>(), std::invalid_argument);
}
