// Copyright (c) 2026 The schedmp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "schedmp/types.hpp"
#include "schedmp/event_log.hpp"
#include "schedmp/transport.hpp"
#include "schedmp/tcp.hpp"
#include "schedmp/reduce.hpp"
#include "schedmp/request.hpp"
#include "schedmp/progress.hpp"
#include "schedmp/schedule.hpp"
#include "schedmp/api.hpp"
#include "schedmp/collectives.hpp"
#include "schedmp/world.hpp"
#include "schedmp/bench.hpp"
