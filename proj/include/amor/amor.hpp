#pragma once

#include "amor/analysis.hpp"
#include "amor/config.hpp"
#include "amor/constants.hpp"
#include "amor/detector.hpp"
#include "amor/dsp.hpp"
#include "amor/error.hpp"
#include "amor/fitting.hpp"
#include "amor/io.hpp"
#include "amor/scenario.hpp"
#include "amor/signal_model.hpp"
