#pragma once

#include "keygram/ablation.hpp"
#include "keygram/backbone.hpp"
#include "keygram/bench.hpp"
#include "keygram/config.hpp"
#include "keygram/errors.hpp"
#include "keygram/fusion.hpp"
#include "keygram/hashing.hpp"
#include "keygram/memory.hpp"
#include "keygram/parser.hpp"
#include "keygram/persistence.hpp"
#include "keygram/shard.hpp"
#include "keygram/task.hpp"
#include "keygram/trainer.hpp"
