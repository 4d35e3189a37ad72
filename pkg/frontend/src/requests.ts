// Per-panel request sequencing: at most one logical in-flight request, and
// responses that arrive after a newer request was issued are discarded.

export class PanelSequencer {
  private lastIssued = 0;
  private lastApplied = 0;

  /** Run fn and deliver its result only if no newer run started meanwhile. */
  async run<T>(fn: () => Promise<T>, apply: (value: T) => void,
               onError?: (err: unknown) => void): Promise<boolean> {
    const ticket = ++this.lastIssued;
    try {
      const value = await fn();
      if (ticket < this.lastIssued || ticket <= this.lastApplied) {
        return false; // stale: a newer request superseded this one
      }
      this.lastApplied = ticket;
      apply(value);
      return true;
    } catch (err) {
      if (ticket === this.lastIssued && onError) onError(err);
      return false;
    }
  }
}

/** Trailing-edge debounce; the returned function also exposes cancel(). */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number,
  timers: { set: typeof setTimeout; clear: typeof clearTimeout } = {
    set: setTimeout,
    clear: clearTimeout,
  },
): ((...args: A) => void) & { cancel: () => void } {
  let handle: ReturnType<typeof setTimeout> | undefined;
  const wrapped = (...args: A) => {
    if (handle !== undefined) timers.clear(handle);
    handle = timers.set(() => {
      handle = undefined;
      fn(...args);
    }, delayMs);
  };
  wrapped.cancel = () => {
    if (handle !== undefined) timers.clear(handle);
    handle = undefined;
  };
  return wrapped;
}
