"""
Tests for the message-passing substrate and its communication accounting.
"""

import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from protocols.comm import (
    COORDINATOR,
    CommStats,
    Continue,
    CoordinatorProtocol,
    Done,
    EchoProtocol,
    Message,
    PROTOCOL_REGISTRY,
    ServerVector,
    charge,
    pair_words,
    register_protocol,
    run_coordinator_protocol,
    server_entity,
    set_words,
)
from utils.errors import InvalidInstanceError, RoundBudgetError, UnknownProtocolError


@register_protocol
class GreedyProtocol(CoordinatorProtocol):
    """Asks for one more round than it declares."""
    name = "test-greedy"
    round_budget = 1

    def server_step(self, view):
        return Message(None, 1)

    def coordinator_step(self, round_no, replies, rng):
        return Continue({owner: Message("again", 2) for owner in replies})


@register_protocol
class InboxProtocol(CoordinatorProtocol):
    """Two rounds; servers echo what they saw in their inbox."""
    name = "test-inbox"
    round_budget = 2

    def server_step(self, view):
        return Message((view.round_no, view.inbox), 1)

    def coordinator_step(self, round_no, replies, rng):
        if round_no == 1:
            return Continue({owner: Message(f"to-{owner}", 3) for owner in replies})
        return Done({owner: replies[owner].payload for owner in replies})


class Unregistered(EchoProtocol):
    name = "test-unregistered"


class TestCommStats:
    """Tests for CommStats counters."""

    def test_charge_accumulates(self):
        """Test charges add up per (entity, round)."""
        stats = CommStats()
        charge(stats, "server-1", 1, 5)
        charge(stats, "server-1", 1, 3)
        assert stats.words_sent[("server-1", 1)] == 8
        assert stats.total_words == 8
        assert stats.total_bits == 8 * 64

    def test_charge_zero_is_noop(self):
        """Test charging zero words leaves no counter."""
        stats = CommStats()
        stats.charge("server-1", 1, 0)
        assert dict(stats.words_sent) == {}

    def test_negative_rejected(self):
        """Test negative charges are refused."""
        with pytest.raises(ValueError):
            CommStats().charge("server-1", 1, -1)

    def test_word_widths(self):
        """Test the word-width rules."""
        assert pair_words(1) == 2
        assert set_words(4) == 5

    def test_breakdowns(self):
        """Test per-entity and per-round totals."""
        stats = CommStats()
        stats.charge("a", 1, 2).charge("b", 1, 3).charge("a", 2, 4)
        assert stats.words_for("a") == 6
        assert stats.words_in_round(1) == 5

    def test_merge(self):
        """Test merging two runs' counters."""
        a = CommStats().charge("x", 1, 2)
        a.rounds_used = 1
        b = CommStats().charge("x", 1, 3).charge("y", 2, 1)
        b.rounds_used = 2
        a.merge(b)
        assert a.words_sent[("x", 1)] == 5
        assert a.total_words == 6
        assert a.rounds_used == 2

    def test_csv_round_trip(self, tmp_path):
        """Test counters survive entity,round,words CSV."""
        stats = CommStats().charge("server-0", 1, 7).charge(COORDINATOR, 2, 4)
        path = tmp_path / "comm.csv"
        stats.to_csv(path)
        loaded = CommStats.from_csv(path)
        assert dict(loaded.words_sent) == dict(stats.words_sent)
        assert loaded.rounds_used == 2
        assert path.read_text().splitlines()[0] == "entity,round,words"

    def test_csv_missing_columns(self, tmp_path):
        """Test a CSV without the required columns."""
        path = tmp_path / "bad.csv"
        path.write_text("entity,words\nx,1\n")
        with pytest.raises(ValueError, match="Missing required columns"):
            CommStats.from_csv(path)


class TestServerVector:
    """Tests for server vector validation."""

    def test_negative_entries(self):
        """Test negative entries are invalid."""
        with pytest.raises(InvalidInstanceError):
            ServerVector(np.array([1.0, -1.0]), 0)

    def test_read_only(self):
        """Test entries cannot be modified."""
        vector = ServerVector(np.array([1.0, 2.0]), 0)
        with pytest.raises(ValueError):
            vector.entries[0] = 5.0


class TestRunCoordinatorProtocol:
    """Tests for protocol execution."""

    def test_echo(self):
        """Test the echo protocol costs one word per server in one round."""
        servers = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0])]
        output, stats = run_coordinator_protocol(servers, EchoProtocol(), seed=1)
        assert output == [1.0, 3.0, 5.0]
        assert stats.total_words == 3
        assert stats.rounds_used == 1

    def test_round_budget(self):
        """Test a protocol overrunning its budget aborts."""
        with pytest.raises(RoundBudgetError):
            run_coordinator_protocol([np.ones(2)], GreedyProtocol(), seed=0)

    def test_unregistered(self):
        """Test unregistered protocols are rejected."""
        assert "test-unregistered" not in PROTOCOL_REGISTRY
        with pytest.raises(UnknownProtocolError):
            run_coordinator_protocol([np.ones(2)], Unregistered(), seed=0)

    def test_mismatched_lengths(self):
        """Test server vectors must share a length."""
        with pytest.raises(InvalidInstanceError):
            run_coordinator_protocol([np.ones(2), np.ones(3)], EchoProtocol(), seed=0)

    def test_inbox_isolation(self):
        """Test servers only see coordinator messages from earlier rounds."""
        output, stats = run_coordinator_protocol([np.ones(2), np.ones(2)], InboxProtocol(), seed=0)
        assert output == {0: (2, ("to-0",)), 1: (2, ("to-1",))}
        assert stats.rounds_used == 2
        assert stats.words_for(COORDINATOR) == 6
        assert stats.words_for(server_entity(0)) == 2

    def test_deterministic(self):
        """Test identical inputs give identical counters."""
        servers = [np.arange(4.0), np.arange(4.0) + 1]
        _, a = run_coordinator_protocol(servers, InboxProtocol(), seed=5)
        _, b = run_coordinator_protocol(servers, InboxProtocol(), seed=5)
        assert dict(a.words_sent) == dict(b.words_sent)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
