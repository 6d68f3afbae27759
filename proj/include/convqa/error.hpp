#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace convqa {

// Base for every error the harness raises. `code()` is a stable machine
// identifier ("SpanError", "TurnLimitExceeded", ...) that also travels over
// the wire in service error bodies.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)), detail_(detail) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string code_;
  std::string detail_;
};

#define CONVQA_DEFINE_ERROR(Name)                                              \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& detail) : Error(#Name, detail) {}        \
  }

// corpus
CONVQA_DEFINE_ERROR(ParseError);
CONVQA_DEFINE_ERROR(SchemaError);
CONVQA_DEFINE_ERROR(SpanError);
CONVQA_DEFINE_ERROR(DuplicateKeyError);

// scoring
CONVQA_DEFINE_ERROR(EmptyRefs);
CONVQA_DEFINE_ERROR(EvenCount);
CONVQA_DEFINE_ERROR(TooFewItems);

// protocol / rewrite
CONVQA_DEFINE_ERROR(MissingPrediction);
CONVQA_DEFINE_ERROR(MisalignedHistories);
CONVQA_DEFINE_ERROR(ConfigError);

// adapters
CONVQA_DEFINE_ERROR(Timeout);
CONVQA_DEFINE_ERROR(Unreachable);
CONVQA_DEFINE_ERROR(ProtocolViolation);
CONVQA_DEFINE_ERROR(UnknownTurn);

// analytics
CONVQA_DEFINE_ERROR(PassageMismatch);
CONVQA_DEFINE_ERROR(MissingLogs);

// humaneval
CONVQA_DEFINE_ERROR(UnknownPassage);
CONVQA_DEFINE_ERROR(UnknownModel);
CONVQA_DEFINE_ERROR(UnknownSession);
CONVQA_DEFINE_ERROR(PhaseError);
CONVQA_DEFINE_ERROR(TurnLimitExceeded);
CONVQA_DEFINE_ERROR(TooFewTurns);
CONVQA_DEFINE_ERROR(OrderingViolation);
CONVQA_DEFINE_ERROR(InvariantViolation);
CONVQA_DEFINE_ERROR(InsufficientJudgments);
CONVQA_DEFINE_ERROR(ClaimError);

#undef CONVQA_DEFINE_ERROR

}  // namespace convqa
