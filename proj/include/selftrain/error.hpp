#pragma once

#include <stdexcept>
#include <string>

namespace selftrain {

/// Root of every error the library throws. `kind()` lets callers map errors
/// to exit codes without a chain of catch blocks.
class Error : public std::runtime_error {
public:
    enum class Kind { Ingestion, Validation, Capacity, Split, Feature, Ambiguity,
                      Initialization, Shape, Training, Decode, Confidence, Format,
                      Scoring, Usage, Io };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

#define SELFTRAIN_DEFINE_ERROR(Name, K)                                          \
    class Name : public Error {                                                  \
    public:                                                                      \
        explicit Name(const std::string& what) : Error(Kind::K, what) {}        \
    }

SELFTRAIN_DEFINE_ERROR(IngestionError, Ingestion);
SELFTRAIN_DEFINE_ERROR(ValidationError, Validation);
SELFTRAIN_DEFINE_ERROR(CapacityError, Capacity);
SELFTRAIN_DEFINE_ERROR(SplitError, Split);
SELFTRAIN_DEFINE_ERROR(FeatureError, Feature);
SELFTRAIN_DEFINE_ERROR(AmbiguityError, Ambiguity);
SELFTRAIN_DEFINE_ERROR(InitializationError, Initialization);
SELFTRAIN_DEFINE_ERROR(ShapeError, Shape);
SELFTRAIN_DEFINE_ERROR(TrainingError, Training);
SELFTRAIN_DEFINE_ERROR(DecodeError, Decode);
SELFTRAIN_DEFINE_ERROR(ConfidenceError, Confidence);
SELFTRAIN_DEFINE_ERROR(FormatError, Format);
SELFTRAIN_DEFINE_ERROR(ScoringError, Scoring);
SELFTRAIN_DEFINE_ERROR(UsageError, Usage);
SELFTRAIN_DEFINE_ERROR(IoError, Io);

#undef SELFTRAIN_DEFINE_ERROR

}  // namespace selftrain
