//! Minimal contract engine: a conditional-payment contract with an
//! escrowed balance map, in two flavours.
//!
//! `send_if_received` checks the recorded payment and transfers in one
//! on-chain step, so replaying a different branch re-evaluates the check.
//! `send_unconditional` performs the transfer with no check; pairing it with
//! an off-chain `check_payment` query reproduces the pattern that goes wrong
//! after a reorganization. Calls that throw leave contract state untouched.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::types::{Address, Coins};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContractId(pub String);

impl ContractId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ContractId {
    fn from(s: &str) -> Self {
        ContractId(s.to_string())
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Deployment-time description of a conditional-payment contract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub id: ContractId,
    /// The payer (only address allowed to call `send_to`).
    pub party_a: Address,
    /// The payee/forwarder (only address allowed to call the send functions).
    pub party_b: Address,
    /// Initial escrowed balances inside the contract.
    #[serde(default)]
    pub balances: BTreeMap<Address, Coins>,
}

/// Live state of a deployed contract. Recomputed from scratch whenever a
/// chain is replayed, so it always reflects the canonical branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractState {
    pub id: ContractId,
    /// Amount recorded by the most recent successful `send_to` in the
    /// current replay; 0 if none.
    pub paid: Coins,
    pub balances: BTreeMap<Address, Coins>,
    pub party_a: Address,
    pub party_b: Address,
}

/// Contract functions callable from a transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractCall {
    /// A pays `to`: transfers inside the contract and records `paid`.
    /// Silently does nothing when A's escrow is short (no else branch).
    SendTo { to: Address, amount: Coins },
    /// B pays `to` only if `paid > amount`; throws otherwise.
    SendIfReceived { to: Address, amount: Coins },
    /// B pays `to` with no payment check (the fragile variant).
    SendUnconditional { to: Address, amount: Coins },
}

/// Why a contract call threw. A throw cancels execution: the containing
/// transaction is included in the block but contract state is unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThrowReason {
    /// Caller does not match the `onlyFrom` guard.
    Unauthorized,
    /// `paid > amount` did not hold.
    ConditionUnmet,
    /// The debited escrow balance was short.
    InsufficientEscrow,
}

/// Result of executing one call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    /// Guards passed and the transfer happened.
    Executed,
    /// The call ran but its internal `if` skipped the transfer
    /// (`send_to` with insufficient escrow).
    GuardSkipped,
    /// The call threw; state is unchanged.
    Thrown(ThrowReason),
}

impl ContractState {
    pub fn new(config: &ContractConfig) -> Self {
        ContractState {
            id: config.id.clone(),
            paid: 0,
            balances: config.balances.clone(),
            party_a: config.party_a.clone(),
            party_b: config.party_b.clone(),
        }
    }

    fn balance(&self, addr: &Address) -> Coins {
        self.balances.get(addr).copied().unwrap_or(0)
    }

    fn transfer(&mut self, from: &Address, to: &Address, amount: Coins) {
        *self.balances.entry(from.clone()).or_insert(0) -= amount;
        *self.balances.entry(to.clone()).or_insert(0) += amount;
    }

    /// Dispatches a call from `caller`. Never leaves partial state: every
    /// check runs before the first write.
    pub fn execute(&mut self, caller: &Address, call: &ContractCall) -> CallOutcome {
        match call {
            ContractCall::SendTo { to, amount } => self.send_to(caller, to, *amount),
            ContractCall::SendIfReceived { to, amount } => {
                self.send_if_received(caller, to, *amount)
            }
            ContractCall::SendUnconditional { to, amount } => {
                self.send_unconditional(caller, to, *amount)
            }
        }
    }

    /// A pays `to` out of escrow and records the amount in `paid`. When A's
    /// escrow is short the call succeeds without transferring and `paid`
    /// keeps its previous value.
    pub fn send_to(&mut self, caller: &Address, to: &Address, amount: Coins) -> CallOutcome {
        if *caller != self.party_a {
            return CallOutcome::Thrown(ThrowReason::Unauthorized);
        }
        if self.balance(&self.party_a.clone()) >= amount {
            let a = self.party_a.clone();
            self.transfer(&a, to, amount);
            self.paid = amount;
            CallOutcome::Executed
        } else {
            CallOutcome::GuardSkipped
        }
    }

    /// B pays `to`, but only when a strictly larger payment was recorded
    /// (`paid > amount`, strict as written).
    pub fn send_if_received(
        &mut self,
        caller: &Address,
        to: &Address,
        amount: Coins,
    ) -> CallOutcome {
        if *caller != self.party_b {
            return CallOutcome::Thrown(ThrowReason::Unauthorized);
        }
        if self.paid > amount {
            if self.balance(&self.party_b.clone()) < amount {
                return CallOutcome::Thrown(ThrowReason::InsufficientEscrow);
            }
            let b = self.party_b.clone();
            self.transfer(&b, to, amount);
            CallOutcome::Executed
        } else {
            CallOutcome::Thrown(ThrowReason::ConditionUnmet)
        }
    }

    /// B pays `to` without checking `paid`. The caller is expected to have
    /// verified the payment off-chain, which is exactly what can go stale.
    pub fn send_unconditional(
        &mut self,
        caller: &Address,
        to: &Address,
        amount: Coins,
    ) -> CallOutcome {
        if *caller != self.party_b {
            return CallOutcome::Thrown(ThrowReason::Unauthorized);
        }
        if self.balance(&self.party_b.clone()) < amount {
            return CallOutcome::Thrown(ThrowReason::InsufficientEscrow);
        }
        let b = self.party_b.clone();
        self.transfer(&b, to, amount);
        CallOutcome::Executed
    }

    /// Read-only query: was a payment above `amount` recorded in this view?
    /// Evaluated against one node's current ledger, outside any block, so
    /// the answer can go stale after a reorganization.
    pub fn check_payment(&self, amount: Coins) -> bool {
        self.paid > amount
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contract() -> ContractState {
        let mut balances = BTreeMap::new();
        balances.insert(Address::from("alice"), 100);
        ContractState::new(&ContractConfig {
            id: ContractId::from("pay"),
            party_a: Address::from("alice"),
            party_b: Address::from("bob"),
            balances,
        })
    }

    #[test]
    fn send_to_transfers_and_records_paid() {
        let mut c = contract();
        let out = c.send_to(&Address::from("alice"), &Address::from("bob"), 100);
        assert_eq!(out, CallOutcome::Executed);
        assert_eq!(c.balance(&Address::from("alice")), 0);
        assert_eq!(c.balance(&Address::from("bob")), 100);
        assert_eq!(c.paid, 100);
    }

    #[test]
    fn send_to_from_wrong_caller_throws() {
        let mut c = contract();
        let before = c.clone();
        let out = c.send_to(&Address::from("bob"), &Address::from("bob"), 10);
        assert_eq!(out, CallOutcome::Thrown(ThrowReason::Unauthorized));
        assert_eq!(c, before);
    }

    #[test]
    fn send_to_with_short_escrow_is_a_silent_noop() {
        let mut c = contract();
        c.paid = 7;
        let out = c.send_to(&Address::from("alice"), &Address::from("bob"), 150);
        assert_eq!(out, CallOutcome::GuardSkipped);
        assert_eq!(c.balance(&Address::from("alice")), 100);
        assert_eq!(c.paid, 7, "paid keeps its previous value");
    }

    #[test]
    fn send_if_received_pays_when_paid_exceeds_amount() {
        let mut c = contract();
        c.send_to(&Address::from("alice"), &Address::from("bob"), 100);
        let out = c.send_if_received(&Address::from("bob"), &Address::from("carole"), 50);
        assert_eq!(out, CallOutcome::Executed);
        assert_eq!(c.balance(&Address::from("bob")), 50);
        assert_eq!(c.balance(&Address::from("carole")), 50);
    }

    #[test]
    fn send_if_received_is_strict() {
        let mut c = contract();
        c.send_to(&Address::from("alice"), &Address::from("bob"), 100);
        let before = c.clone();
        // paid == amount throws: the comparison is strictly greater-than.
        let out = c.send_if_received(&Address::from("bob"), &Address::from("carole"), 100);
        assert_eq!(out, CallOutcome::Thrown(ThrowReason::ConditionUnmet));
        assert_eq!(c, before);
    }

    #[test]
    fn send_if_received_without_payment_throws() {
        let mut c = contract();
        let before = c.clone();
        let out = c.send_if_received(&Address::from("bob"), &Address::from("carole"), 50);
        assert_eq!(out, CallOutcome::Thrown(ThrowReason::ConditionUnmet));
        assert_eq!(c, before);
    }

    #[test]
    fn check_payment_reads_current_view() {
        let mut c = contract();
        assert!(!c.check_payment(50), "fresh contract");
        c.send_to(&Address::from("alice"), &Address::from("bob"), 100);
        assert!(c.check_payment(50));
        assert!(!c.check_payment(100), "strict comparison");
    }

    #[test]
    fn throws_leave_state_bit_identical() {
        let mut c = contract();
        c.send_to(&Address::from("alice"), &Address::from("bob"), 60);
        let before = c.clone();
        let calls = [
            (
                Address::from("eve"),
                ContractCall::SendTo {
                    to: Address::from("eve"),
                    amount: 1,
                },
            ),
            (
                Address::from("bob"),
                ContractCall::SendIfReceived {
                    to: Address::from("eve"),
                    amount: 60,
                },
            ),
            (
                Address::from("bob"),
                ContractCall::SendUnconditional {
                    to: Address::from("eve"),
                    amount: 1000,
                },
            ),
        ];
        for (caller, call) in &calls {
            let out = c.execute(caller, call);
            assert!(matches!(out, CallOutcome::Thrown(_)), "{call:?}");
            assert_eq!(c, before, "throw must not change state: {call:?}");
        }
    }
}
