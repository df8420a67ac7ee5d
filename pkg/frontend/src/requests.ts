/** Debouncing and stale-response rejection for slider-driven requests. */

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
  timers: { set: typeof setTimeout; clear: typeof clearTimeout } = {
    set: setTimeout,
    clear: clearTimeout,
  },
): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (handle !== null) timers.clear(handle);
    handle = timers.set(() => {
      handle = null;
      fn(...args);
    }, waitMs);
  };
}

/** At most one logical request stream per control: responses arriving out of
 * order are discarded by sequence number. */
export class LatestWins<T> {
  private seq = 0;

  async run(task: () => Promise<T>, apply: (value: T) => void): Promise<boolean> {
    const ticket = ++this.seq;
    const value = await task();
    if (ticket !== this.seq) {
      return false; // a newer request finished already or is pending
    }
    apply(value);
    return true;
  }
}
