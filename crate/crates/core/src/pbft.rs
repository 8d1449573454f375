//! Three-phase BFT replication of blocks: pre-prepare, prepare, commit, with
//! a simplified view change for stalled primaries.
//!
//! Each replica is a pure transition function: `(state, message, now)` in,
//! `(state', outbox, committed blocks, timer requests)` out. There are no
//! threads or sockets here; the simulator owns delivery and time. Every
//! outbox entry is a broadcast to all other members.
//!
//! Faults tolerated: up to `f` silent or scheduling-hostile members out of
//! `n >= 3f + 1`. Hostile members in this codebase attack the scheduling
//! layer, not consensus internals, so the view change carries re-proposals
//! from the new primary's own log rather than full prepared certificates.
//! Checkpointing and log truncation are omitted; runs are scenario-bounded.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Block, CommitVote, Transaction};
use crate::types::{Digest, DigestBuilder, NodeId, Signature, SignatureScheme, SimMs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub members: Vec<NodeId>,
    pub f: usize,
    pub view: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PbftError {
    #[error("cluster of {n} members cannot tolerate f={f} (need n >= 3f+1)")]
    BadClusterBound { n: usize, f: usize },
    #[error("this replica is not the primary of the current view")]
    NotPrimary,
}

impl ClusterConfig {
    pub fn new(members: Vec<NodeId>, f: usize) -> Result<Self, PbftError> {
        if members.len() < 3 * f + 1 {
            return Err(PbftError::BadClusterBound { n: members.len(), f });
        }
        Ok(Self { members, f, view: 0 })
    }

    pub fn primary_of(&self, view: u64) -> &NodeId {
        &self.members[(view % self.members.len() as u64) as usize]
    }
}

/// Commit quorum: 2f + 1 matching messages from distinct senders.
pub fn quorum_size(config: &ClusterConfig) -> usize {
    2 * config.f + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusPhase {
    PrePrepare,
    Prepare,
    Commit,
    ViewChange,
    NewView,
}

impl ConsensusPhase {
    fn tag(self) -> u8 {
        match self {
            ConsensusPhase::PrePrepare => 0,
            ConsensusPhase::Prepare => 1,
            ConsensusPhase::Commit => 2,
            ConsensusPhase::ViewChange => 3,
            ConsensusPhase::NewView => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConsensusMessage {
    pub phase: ConsensusPhase,
    pub view: u64,
    pub sequence: u64,
    pub block_digest: Digest,
    /// Proposal body; carried by PrePrepare only.
    pub block: Option<Arc<Block>>,
    pub sender: NodeId,
    pub signature: Signature,
}

impl ConsensusMessage {
    fn content_digest(phase: ConsensusPhase, view: u64, sequence: u64, block_digest: &Digest, sender: &NodeId) -> Digest {
        // Commit signatures double as quorum-certificate votes, so they sign
        // the ledger's canonical vote content.
        if phase == ConsensusPhase::Commit {
            return crate::ledger::commit_vote_digest(sequence, block_digest, sender);
        }
        DigestBuilder::new("consensus-msg")
            .chunk(&[phase.tag()])
            .u64(view)
            .u64(sequence)
            .digest(block_digest)
            .str(sender.as_str())
            .finish()
    }

    pub fn signed(
        phase: ConsensusPhase,
        view: u64,
        sequence: u64,
        block_digest: Digest,
        block: Option<Arc<Block>>,
        sender: NodeId,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        let signature = scheme.sign(&sender, &Self::content_digest(phase, view, sequence, &block_digest, &sender));
        Self { phase, view, sequence, block_digest, block, sender, signature }
    }

    pub fn verify(&self, scheme: &dyn SignatureScheme) -> bool {
        scheme.verify(
            &self.sender,
            &Self::content_digest(self.phase, self.view, self.sequence, &self.block_digest, &self.sender),
            &self.signature,
        )
    }
}

/// Point-to-point consensus sends per phase, tallied at the sender.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounters {
    pub preprepare: u64,
    pub prepare: u64,
    pub commit: u64,
    pub viewchange: u64,
}

impl MessageCounters {
    pub fn total(&self) -> u64 {
        self.preprepare + self.prepare + self.commit + self.viewchange
    }

    pub fn add(&mut self, other: &MessageCounters) {
        self.preprepare += other.preprepare;
        self.prepare += other.prepare;
        self.commit += other.commit;
        self.viewchange += other.viewchange;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimerKind {
    /// Re-check progress of a slot; fires a view change if it is still
    /// uncommitted in the same view.
    SlotProgress { view: u64, sequence: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimerRequest {
    pub delay_ms: SimMs,
    pub kind: TimerKind,
}

#[derive(Clone, Debug, Default)]
pub struct PbftOutput {
    /// Broadcasts: the transport fans each entry out to all other members.
    pub outbox: Vec<ConsensusMessage>,
    /// Blocks whose commit quorum completed, in sequence order with no gaps,
    /// each carrying its quorum certificate.
    pub committed: Vec<Block>,
    pub timers: Vec<TimerRequest>,
}

impl PbftOutput {
    fn merge(&mut self, other: PbftOutput) {
        self.outbox.extend(other.outbox);
        self.committed.extend(other.committed);
        self.timers.extend(other.timers);
    }
}

#[derive(Clone, Debug, Default)]
struct Slot {
    block: Option<Arc<Block>>,
    preprepare: Option<(NodeId, Digest)>,
    /// First prepare per sender; equivocation counts once.
    prepares: BTreeMap<NodeId, Digest>,
    /// First commit per sender, with its signature for the quorum cert.
    commits: BTreeMap<NodeId, (Digest, Signature)>,
    sent_prepare: bool,
    sent_commit: bool,
    committed: bool,
    vc_fires: u32,
}

pub struct ReplicaState {
    pub node: NodeId,
    pub config: ClusterConfig,
    pub counters: MessageCounters,
    pub bad_signature_drops: u64,
    view_change_timeout_ms: SimMs,
    slots: BTreeMap<(u64, u64), Slot>,
    last_committed: u64,
    commit_ready: BTreeMap<u64, Block>,
    in_flight: BTreeSet<u64>,
    vc_votes: BTreeMap<u64, BTreeSet<NodeId>>,
    highest_vc_sent: u64,
    scheme: Arc<dyn SignatureScheme>,
}

impl ReplicaState {
    pub fn new(node: NodeId, config: ClusterConfig, view_change_timeout_ms: SimMs, scheme: Arc<dyn SignatureScheme>) -> Self {
        Self {
            node,
            config,
            counters: MessageCounters::default(),
            bad_signature_drops: 0,
            view_change_timeout_ms,
            slots: BTreeMap::new(),
            last_committed: 0,
            commit_ready: BTreeMap::new(),
            in_flight: BTreeSet::new(),
            vc_votes: BTreeMap::new(),
            highest_vc_sent: 0,
            scheme,
        }
    }

    pub fn view(&self) -> u64 {
        self.config.view
    }

    pub fn primary(&self) -> &NodeId {
        self.config.primary_of(self.config.view)
    }

    pub fn is_primary(&self) -> bool {
        *self.primary() == self.node
    }

    pub fn last_committed(&self) -> u64 {
        self.last_committed
    }

    /// One consensus instance at a time keeps sequencing aligned with chain
    /// height; the mempool waits while a slot is in flight.
    pub fn can_propose(&self) -> bool {
        self.in_flight.is_empty()
    }

    fn quorum(&self) -> usize {
        quorum_size(&self.config)
    }

    fn broadcast(&mut self, out: &mut PbftOutput, msg: ConsensusMessage) {
        let fanout = (self.config.members.len() - 1) as u64;
        match msg.phase {
            ConsensusPhase::PrePrepare => self.counters.preprepare += fanout,
            ConsensusPhase::Prepare => self.counters.prepare += fanout,
            ConsensusPhase::Commit => self.counters.commit += fanout,
            ConsensusPhase::ViewChange | ConsensusPhase::NewView => self.counters.viewchange += fanout,
        }
        out.outbox.push(msg);
    }

    /// Forms a block from the pending transactions and broadcasts its
    /// PrePrepare. No-op on an empty batch: the chain carries no empty
    /// blocks.
    pub fn propose(
        &mut self,
        txns: Vec<Transaction>,
        parent_height: u64,
        parent_digest: Digest,
        _now: SimMs,
    ) -> Result<PbftOutput, PbftError> {
        if !self.is_primary() {
            return Err(PbftError::NotPrimary);
        }
        let mut out = PbftOutput::default();
        if txns.is_empty() {
            return Ok(out);
        }
        let view = self.config.view;
        let sequence = parent_height + 1;
        let block = Arc::new(Block {
            height: sequence,
            parent_digest,
            view,
            transactions: txns,
            consensus_proof: vec![],
        });
        let digest = block.digest();
        let slot = self.slots.entry((view, sequence)).or_default();
        slot.block = Some(Arc::clone(&block));
        slot.preprepare = Some((self.node.clone(), digest));
        self.in_flight.insert(sequence);
        let msg = ConsensusMessage::signed(
            ConsensusPhase::PrePrepare,
            view,
            sequence,
            digest,
            Some(block),
            self.node.clone(),
            self.scheme.as_ref(),
        );
        self.broadcast(&mut out, msg);
        out.timers.push(TimerRequest {
            delay_ms: self.view_change_timeout_ms,
            kind: TimerKind::SlotProgress { view, sequence },
        });
        out.merge(self.advance_slot(view, sequence));
        Ok(out)
    }

    pub fn handle_message(&mut self, msg: ConsensusMessage, _now: SimMs) -> PbftOutput {
        let mut out = PbftOutput::default();
        if !msg.verify(self.scheme.as_ref()) {
            self.bad_signature_drops += 1;
            return out;
        }
        if !self.config.members.contains(&msg.sender) {
            return out;
        }
        match msg.phase {
            ConsensusPhase::PrePrepare => {
                if msg.view < self.config.view || msg.sequence <= self.last_committed {
                    return out; // stale
                }
                if msg.sender != *self.config.primary_of(msg.view) {
                    return out;
                }
                let Some(block) = msg.block.as_ref() else { return out };
                if block.digest() != msg.block_digest {
                    return out;
                }
                let slot = self.slots.entry((msg.view, msg.sequence)).or_default();
                if slot.preprepare.is_none() {
                    slot.preprepare = Some((msg.sender.clone(), msg.block_digest));
                    slot.block = Some(Arc::clone(block));
                    self.in_flight.insert(msg.sequence);
                    out.timers.push(TimerRequest {
                        delay_ms: self.view_change_timeout_ms,
                        kind: TimerKind::SlotProgress { view: msg.view, sequence: msg.sequence },
                    });
                }
                out.merge(self.advance_slot(msg.view, msg.sequence));
            }
            ConsensusPhase::Prepare => {
                if msg.view < self.config.view || msg.sequence <= self.last_committed {
                    return out;
                }
                let slot = self.slots.entry((msg.view, msg.sequence)).or_default();
                slot.prepares.entry(msg.sender.clone()).or_insert(msg.block_digest);
                out.merge(self.advance_slot(msg.view, msg.sequence));
            }
            ConsensusPhase::Commit => {
                if msg.view < self.config.view || msg.sequence <= self.last_committed {
                    return out;
                }
                let slot = self.slots.entry((msg.view, msg.sequence)).or_default();
                slot.commits
                    .entry(msg.sender.clone())
                    .or_insert((msg.block_digest, msg.signature));
                out.merge(self.advance_slot(msg.view, msg.sequence));
            }
            ConsensusPhase::ViewChange => {
                out.merge(self.record_view_change_vote(msg.view, msg.sender));
            }
            ConsensusPhase::NewView => {
                if msg.view > self.config.view && msg.sender == *self.config.primary_of(msg.view) {
                    out.merge(self.adopt_view(msg.view));
                }
            }
        }
        out
    }

    /// Progress timer: if the slot is still uncommitted in an unchanged view,
    /// vote to replace the primary. Fires are capped so an unrecoverable
    /// cluster cannot loop forever.
    pub fn on_timer(&mut self, kind: TimerKind, _now: SimMs) -> PbftOutput {
        let mut out = PbftOutput::default();
        match kind {
            TimerKind::SlotProgress { view, sequence } => {
                if sequence <= self.last_committed || self.config.view != view {
                    return out;
                }
                let fires = {
                    let slot = self.slots.entry((view, sequence)).or_default();
                    slot.vc_fires += 1;
                    slot.vc_fires
                };
                if fires as usize > self.config.members.len() {
                    return out;
                }
                out.merge(self.start_view_change());
                out.timers.push(TimerRequest {
                    delay_ms: self.view_change_timeout_ms,
                    kind: TimerKind::SlotProgress { view, sequence },
                });
            }
        }
        out
    }

    /// Broadcasts a view-change vote for the next view (idempotent per
    /// target view). Called from the slot timer and from the node layer's
    /// own progress tracking.
    pub fn start_view_change(&mut self) -> PbftOutput {
        let target = (self.config.view + 1).max(self.highest_vc_sent + 1);
        self.vote_view_change(target)
    }

    fn vote_view_change(&mut self, target: u64) -> PbftOutput {
        let mut out = PbftOutput::default();
        if self.highest_vc_sent >= target || target <= self.config.view {
            return out;
        }
        self.highest_vc_sent = target;
        let msg = ConsensusMessage::signed(
            ConsensusPhase::ViewChange,
            target,
            0,
            Digest::ZERO,
            None,
            self.node.clone(),
            self.scheme.as_ref(),
        );
        self.broadcast(&mut out, msg);
        let node = self.node.clone();
        out.merge(self.record_view_change_vote(target, node));
        out
    }

    fn record_view_change_vote(&mut self, target: u64, sender: NodeId) -> PbftOutput {
        let mut out = PbftOutput::default();
        if target <= self.config.view {
            return out;
        }
        self.vc_votes.entry(target).or_default().insert(sender);
        let votes = self.vc_votes[&target].len();
        let is_new_primary = *self.config.primary_of(target) == self.node;
        if votes >= self.quorum() && is_new_primary {
            out.merge(self.adopt_view(target));
            let msg = ConsensusMessage::signed(
                ConsensusPhase::NewView,
                target,
                0,
                Digest::ZERO,
                None,
                self.node.clone(),
                self.scheme.as_ref(),
            );
            self.broadcast(&mut out, msg);
            out.merge(self.repropose_uncommitted(target));
        } else if votes > self.config.f && self.highest_vc_sent < target {
            // f+1 distinct votes prove at least one honest replica timed out;
            // join so the view change completes.
            out.merge(self.vote_view_change(target));
        }
        out
    }

    fn adopt_view(&mut self, view: u64) -> PbftOutput {
        self.config.view = view;
        let mut out = PbftOutput::default();
        // Buffered messages for the adopted view may already satisfy quorums.
        let pending: Vec<u64> = self
            .slots
            .range((view, 0)..(view + 1, 0))
            .map(|((_, seq), _)| *seq)
            .collect();
        for seq in pending {
            out.merge(self.advance_slot(view, seq));
        }
        out
    }

    /// The new primary re-proposes every uncommitted block from its own log.
    /// Broadcast atomicity in the transport plus crash-only primaries mean
    /// the new primary always holds any block that could have committed
    /// elsewhere.
    fn repropose_uncommitted(&mut self, view: u64) -> PbftOutput {
        let mut out = PbftOutput::default();
        let mut best: BTreeMap<u64, Arc<Block>> = BTreeMap::new();
        for ((v, seq), slot) in &self.slots {
            if *v >= view || *seq <= self.last_committed {
                continue;
            }
            if let Some(block) = &slot.block {
                best.insert(*seq, Arc::clone(block)); // ascending views: last wins
            }
        }
        for (seq, block) in best {
            let digest = block.digest();
            let slot = self.slots.entry((view, seq)).or_default();
            if slot.preprepare.is_some() {
                continue;
            }
            slot.block = Some(Arc::clone(&block));
            slot.preprepare = Some((self.node.clone(), digest));
            self.in_flight.insert(seq);
            let msg = ConsensusMessage::signed(
                ConsensusPhase::PrePrepare,
                view,
                seq,
                digest,
                Some(block),
                self.node.clone(),
                self.scheme.as_ref(),
            );
            self.broadcast(&mut out, msg);
            out.timers.push(TimerRequest {
                delay_ms: self.view_change_timeout_ms,
                kind: TimerKind::SlotProgress { view, sequence: seq },
            });
            out.merge(self.advance_slot(view, seq));
        }
        out
    }

    fn advance_slot(&mut self, view: u64, sequence: u64) -> PbftOutput {
        let mut out = PbftOutput::default();
        if view != self.config.view || sequence <= self.last_committed {
            return out;
        }
        let quorum = self.quorum();
        let primary = self.config.primary_of(view).clone();
        let node = self.node.clone();

        let Some(slot) = self.slots.get_mut(&(view, sequence)) else { return out };
        let Some((_, digest)) = slot.preprepare.clone() else { return out };

        let mut to_send: Vec<ConsensusPhase> = Vec::new();
        if node != primary && !slot.sent_prepare {
            slot.sent_prepare = true;
            slot.prepares.insert(node.clone(), digest);
            to_send.push(ConsensusPhase::Prepare);
        }
        // Pre-prepare counts as the primary's prepare.
        let prepared = 1 + slot.prepares.values().filter(|d| **d == digest).count();
        if prepared >= quorum && !slot.sent_commit {
            slot.sent_commit = true;
            let content = ConsensusMessage::content_digest(ConsensusPhase::Commit, view, sequence, &digest, &node);
            let sig = self.scheme.sign(&node, &content);
            slot.commits.insert(node.clone(), (digest, sig));
            to_send.push(ConsensusPhase::Commit);
        }
        let commit_votes: Vec<CommitVote> = slot
            .commits
            .iter()
            .filter(|(_, (d, _))| *d == digest)
            .map(|(voter, (_, sig))| CommitVote { voter: voter.clone(), signature: *sig })
            .collect();
        let mut newly_committed = false;
        if commit_votes.len() >= quorum && !slot.committed {
            slot.committed = true;
            newly_committed = true;
            let mut block = (**slot.block.as_ref().expect("preprepared slot has block")).clone();
            block.consensus_proof = commit_votes.into_iter().take(quorum).collect();
            self.commit_ready.entry(sequence).or_insert(block);
        }

        for phase in to_send {
            let msg = ConsensusMessage::signed(
                phase,
                view,
                sequence,
                digest,
                None,
                node.clone(),
                self.scheme.as_ref(),
            );
            self.broadcast(&mut out, msg);
        }
        if newly_committed {
            // Apply strictly in sequence order with no gaps.
            while let Some(block) = self.commit_ready.remove(&(self.last_committed + 1)) {
                self.last_committed += 1;
                self.in_flight.remove(&self.last_committed);
                out.committed.push(block);
            }
            let floor = self.last_committed;
            self.slots.retain(|(_, seq), _| *seq > floor);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{DataRecord, TxnPayload};
    use crate::types::{RequestId, StubSigner};

    fn member(i: usize) -> NodeId {
        NodeId::new(format!("c{i:02}"))
    }

    fn cluster(n: usize, f: usize) -> ClusterConfig {
        ClusterConfig::new((0..n).map(member).collect(), f).unwrap()
    }

    fn replica(i: usize, n: usize, f: usize) -> ReplicaState {
        ReplicaState::new(member(i), cluster(n, f), 2000.0, Arc::new(StubSigner))
    }

    fn dummy_txn(i: u64) -> Transaction {
        Transaction::build(
            Some(RequestId::derive(&NodeId::new("iot0"), i)),
            TxnPayload::Data(DataRecord {
                data_digest: Digest::of(&i.to_le_bytes()),
                source: NodeId::new("iot0"),
                response_key: vec![],
                persist: false,
            }),
            member(0),
            &StubSigner,
        )
    }

    #[test]
    fn quorum_sizes() {
        assert_eq!(quorum_size(&cluster(4, 1)), 3);
        assert_eq!(quorum_size(&cluster(16, 5)), 11);
        assert_eq!(quorum_size(&cluster(1, 0)), 1);
    }

    #[test]
    fn cluster_bound_enforced() {
        assert_eq!(
            ClusterConfig::new((0..4).map(member).collect(), 2).unwrap_err(),
            PbftError::BadClusterBound { n: 4, f: 2 }
        );
    }

    #[test]
    fn non_primary_cannot_propose() {
        let mut r = replica(1, 4, 1);
        assert_eq!(
            r.propose(vec![dummy_txn(0)], 0, Digest::ZERO, 0.0).unwrap_err(),
            PbftError::NotPrimary
        );
    }

    #[test]
    fn empty_batch_is_a_noop() {
        let mut r = replica(0, 4, 1);
        let out = r.propose(vec![], 0, Digest::ZERO, 0.0).unwrap();
        assert!(out.outbox.is_empty());
        assert!(out.timers.is_empty());
        assert!(r.can_propose());
    }

    /// Drives a full 4-node round by explicit message passing and checks the
    /// textbook exchange: one pre-prepare broadcast, prepares from backups,
    /// commits from everyone, every replica committing the block exactly
    /// once.
    #[test]
    fn four_node_happy_path() {
        let mut replicas: Vec<ReplicaState> = (0..4).map(|i| replica(i, 4, 1)).collect();
        let mut inboxes: Vec<Vec<ConsensusMessage>> = vec![vec![]; 4];
        let mut committed: Vec<Vec<Block>> = vec![vec![]; 4];

        let out = replicas[0].propose(vec![dummy_txn(0)], 0, Digest::ZERO, 0.0).unwrap();
        for msg in out.outbox {
            for i in 0..4 {
                if member(i) != msg.sender {
                    inboxes[i].push(msg.clone());
                }
            }
        }
        // Flood until quiescence.
        loop {
            let mut progressed = false;
            for i in 0..4 {
                let msgs: Vec<ConsensusMessage> = std::mem::take(&mut inboxes[i]);
                for msg in msgs {
                    progressed = true;
                    let out = replicas[i].handle_message(msg, 0.0);
                    committed[i].extend(out.committed);
                    for m in out.outbox {
                        for j in 0..4 {
                            if member(j) != m.sender {
                                inboxes[j].push(m.clone());
                            }
                        }
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        for i in 0..4 {
            assert_eq!(committed[i].len(), 1, "replica {i} commits exactly once");
            assert_eq!(committed[i][0].height, 1);
            assert!(committed[i][0].consensus_proof.len() >= 3);
        }
        // All commit the same digest.
        let digests: BTreeSet<Digest> = committed.iter().map(|c| c[0].digest()).collect();
        assert_eq!(digests.len(), 1);
    }

    fn preprepared_backup() -> (ReplicaState, Arc<Block>, Digest) {
        let mut primary = replica(0, 4, 1);
        let out = primary.propose(vec![dummy_txn(1)], 0, Digest::ZERO, 0.0).unwrap();
        let pp = out.outbox.into_iter().next().unwrap();
        let block = pp.block.clone().unwrap();
        let digest = pp.block_digest;
        let mut backup = replica(1, 4, 1);
        let out = backup.handle_message(pp, 0.0);
        assert_eq!(out.outbox.len(), 1);
        assert_eq!(out.outbox[0].phase, ConsensusPhase::Prepare);
        (backup, block, digest)
    }

    #[test]
    fn backup_commits_after_preprepare_plus_prepares() {
        // After the primary's pre-prepare and 2f prepares have been seen at a
        // backup, it must have broadcast its commit.
        let (mut backup, _block, digest) = preprepared_backup();
        let mut sent_commit = false;
        for i in [2usize, 3] {
            let prep = ConsensusMessage::signed(
                ConsensusPhase::Prepare,
                0,
                1,
                digest,
                None,
                member(i),
                &StubSigner,
            );
            let out = backup.handle_message(prep, 0.0);
            sent_commit |= out.outbox.iter().any(|m| m.phase == ConsensusPhase::Commit);
        }
        assert!(sent_commit);
    }

    #[test]
    fn equivocating_prepare_counts_once() {
        let (mut backup, _block, digest) = preprepared_backup();
        // Sender 2 equivocates: same slot, two digests. Only the first may
        // count toward any quorum.
        let other = Digest::of(b"forged");
        for d in [other, digest] {
            let prep = ConsensusMessage::signed(ConsensusPhase::Prepare, 0, 1, d, None, member(2), &StubSigner);
            backup.handle_message(prep, 0.0);
        }
        // Matching prepares now: backup itself + nothing else (sender 2 is
        // pinned to the forged digest). One honest prepare from 3 is not
        // enough (pre-prepare + self + c03 = 3 = quorum)... so check at the
        // boundary: without c03 no commit, with c03 commit.
        let slot_committed_before = {
            let prep = ConsensusMessage::signed(ConsensusPhase::Prepare, 0, 1, digest, None, member(3), &StubSigner);
            let out = backup.handle_message(prep, 0.0);
            out.outbox.iter().any(|m| m.phase == ConsensusPhase::Commit)
        };
        assert!(
            slot_committed_before,
            "honest prepare from c03 completes the quorum despite c02's equivocation"
        );
        // And the equivocator never contributed: replay with only the forged
        // digest from c02 and no c03.
        let (mut backup2, _b, digest2) = preprepared_backup();
        let prep = ConsensusMessage::signed(ConsensusPhase::Prepare, 0, 1, Digest::of(b"forged"), None, member(2), &StubSigner);
        let out = backup2.handle_message(prep, 0.0);
        assert!(!out.outbox.iter().any(|m| m.phase == ConsensusPhase::Commit));
        let _ = digest2;
    }

    #[test]
    fn commit_quorum_emits_exactly_once() {
        let (mut backup, _block, digest) = preprepared_backup();
        for i in [2usize, 3] {
            let prep = ConsensusMessage::signed(ConsensusPhase::Prepare, 0, 1, digest, None, member(i), &StubSigner);
            backup.handle_message(prep, 0.0);
        }
        let mut commits_emitted = 0;
        for i in [0usize, 2, 3, 0, 2] {
            // duplicates included
            let commit = ConsensusMessage::signed(ConsensusPhase::Commit, 0, 1, digest, None, member(i), &StubSigner);
            let out = backup.handle_message(commit, 0.0);
            commits_emitted += out.committed.len();
        }
        assert_eq!(commits_emitted, 1);
    }

    #[test]
    fn stale_view_messages_dropped_silently() {
        let mut r = replica(1, 4, 1);
        r.config.view = 3;
        let prep = ConsensusMessage::signed(ConsensusPhase::Prepare, 1, 1, Digest::ZERO, None, member(2), &StubSigner);
        let out = r.handle_message(prep, 0.0);
        assert!(out.outbox.is_empty() && out.committed.is_empty());
    }

    #[test]
    fn bad_signature_dropped_and_counted() {
        let mut r = replica(1, 4, 1);
        let mut msg = ConsensusMessage::signed(ConsensusPhase::Prepare, 0, 1, Digest::ZERO, None, member(2), &StubSigner);
        msg.signature = Digest::of(b"garbage");
        let out = r.handle_message(msg, 0.0);
        assert!(out.outbox.is_empty());
        assert_eq!(r.bad_signature_drops, 1);
    }

    #[test]
    fn timer_fires_view_change_and_quorum_elects_new_primary() {
        // Primary c00 silent. Backups 1..3 time out, vote for view 1, and the
        // new primary (c01) announces NewView.
        let mut replicas: Vec<ReplicaState> = (0..4).map(|i| replica(i, 4, 1)).collect();
        // Give each backup an in-flight slot so the timer has something to
        // check: an accepted pre-prepare that never commits.
        let mut primary = replica(0, 4, 1);
        let out = primary.propose(vec![dummy_txn(2)], 0, Digest::ZERO, 0.0).unwrap();
        let pp = &out.outbox[0];
        for r in replicas.iter_mut().skip(1) {
            r.handle_message(pp.clone(), 0.0);
        }
        // Fire timers at backups 2 and 3 only: 2 votes — not enough for the
        // new primary to announce, but c01 joins at f+1 and completes it.
        let mut msgs: Vec<ConsensusMessage> = vec![];
        for i in [2usize, 3] {
            let out = replicas[i].on_timer(TimerKind::SlotProgress { view: 0, sequence: 1 }, 2000.0);
            msgs.extend(out.outbox);
        }
        assert_eq!(msgs.iter().filter(|m| m.phase == ConsensusPhase::ViewChange).count(), 2);
        let mut new_view_seen = false;
        let mut round: Vec<ConsensusMessage> = msgs;
        for _ in 0..4 {
            let mut next = vec![];
            for msg in &round {
                for i in 0..4 {
                    if member(i) == msg.sender {
                        continue;
                    }
                    let out = replicas[i].handle_message(msg.clone(), 2000.0);
                    next.extend(out.outbox);
                }
            }
            new_view_seen |= next.iter().any(|m| m.phase == ConsensusPhase::NewView);
            round = next;
            if round.is_empty() {
                break;
            }
        }
        assert!(new_view_seen, "c01 announces the new view");
        assert_eq!(replicas[1].view(), 1);
        assert!(replicas[1].is_primary());
    }

    #[test]
    fn fewer_than_quorum_view_changes_elect_nobody() {
        let mut r1 = replica(1, 4, 1);
        // Single vote from c02 targeting view 1 (r1 is its primary).
        let vc = ConsensusMessage::signed(ConsensusPhase::ViewChange, 1, 0, Digest::ZERO, None, member(2), &StubSigner);
        let out = r1.handle_message(vc, 0.0);
        assert!(!out.outbox.iter().any(|m| m.phase == ConsensusPhase::NewView));
        assert_eq!(r1.view(), 0, "still in old view");
    }

    /// Brute-force oracle: at one backup, deliver every permutation of the
    /// remaining round messages and require the identical outcome: commit
    /// emitted exactly once, for the proposed digest, never before both
    /// quorums are satisfiable.
    #[test]
    fn all_permutations_of_round_messages_commit_once() {
        let mut primary = replica(0, 4, 1);
        let out = primary.propose(vec![dummy_txn(3)], 0, Digest::ZERO, 0.0).unwrap();
        let pp = out.outbox[0].clone();
        let digest = pp.block_digest;
        let mk = |phase, sender: usize| {
            ConsensusMessage::signed(phase, 0, 1, digest, None, member(sender), &StubSigner)
        };
        let msgs: Vec<ConsensusMessage> = vec![
            pp,
            mk(ConsensusPhase::Prepare, 2),
            mk(ConsensusPhase::Prepare, 3),
            mk(ConsensusPhase::Commit, 0),
            mk(ConsensusPhase::Commit, 2),
            mk(ConsensusPhase::Commit, 3),
        ];
        let mut order: Vec<usize> = (0..msgs.len()).collect();
        let mut total = 0;
        permute(&mut order, 0, &mut |perm: &[usize]| {
            total += 1;
            let mut backup = replica(1, 4, 1);
            let mut committed = vec![];
            for &i in perm {
                let out = backup.handle_message(msgs[i].clone(), 0.0);
                committed.extend(out.committed);
            }
            assert_eq!(committed.len(), 1, "order {perm:?}");
            assert_eq!(committed[0].digest(), digest);
        });
        assert_eq!(total, 720);
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }
}
